#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "fpf/archgen.hpp"
#include "fpf/container.hpp"
#include "fpf/dataset_io.hpp"
#include "fpf/matcher.hpp"
#include "fpf/metrics.hpp"
#include "fpf/net.hpp"
#include "fpf/phantom.hpp"
#include "fpf/pipeline.hpp"
#include "fpf/rng.hpp"
#include "fpf/signal.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace fpf;

namespace {

struct Common {
  std::string config;
  std::uint64_t seed = 0;
  std::string out = ".";
  int threads = 1;
  bool deterministic = false;
};

void add_common(CLI::App* cmd, Common& c, bool config_required = true) {
  auto* cfg = cmd->add_option("--config", c.config, "config JSON path")
                  ->envname("FPF_CONFIG");
  if (config_required) cfg->required();
  cmd->add_option("--seed", c.seed, "master seed")->envname("FPF_SEED");
  cmd->add_option("--out", c.out, "output directory")->envname("FPF_OUT");
  cmd->add_option("--threads", c.threads, "parallelism cap")->envname("FPF_THREADS");
  cmd->add_flag("--deterministic", c.deterministic,
                "single-threaded numeric paths, timing-free manifests")
      ->envname("FPF_DETERMINISTIC");
}

json load_config(const Common& c) {
  if (c.config.empty()) return json::object();
  return read_json(c.config);
}

std::string git_hash() {
  FILE* p = popen("git rev-parse HEAD 2>/dev/null", "r");
  if (p == nullptr) return "unknown";
  char buf[64] = {};
  const bool ok = fgets(buf, sizeof(buf), p) != nullptr;
  pclose(p);
  if (!ok) return "unknown";
  std::string s(buf);
  while (!s.empty() && (s.back() == '\n' || s.back() == '\r')) s.pop_back();
  return s.empty() ? "unknown" : s;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void write_manifest(const Common& c, const std::string& subcommand, const json& config,
                    double seconds, json extra = json::object()) {
  const std::string dumped = config.dump();
  json m = {{"subcommand", subcommand},
            {"config", config},
            {"config_hash", hex64(fnv1a64(dumped.data(), dumped.size()))},
            {"seed", c.seed},
            {"threads", c.threads},
            {"deterministic", c.deterministic},
            {"git_hash", git_hash()}};
  if (!c.deterministic) m["duration_seconds"] = seconds;
  for (auto& [k, v] : extra.items()) m[k] = v;
  write_json(fs::path(c.out) / "manifest.json", m);
}

json provenance(const Common& c, const json& config) {
  const std::string dumped = config.dump();
  return {{"seed", c.seed},
          {"config_hash", hex64(fnv1a64(dumped.data(), dumped.size()))}};
}

Network<float> load_network(const fs::path& path) { return Network<float>::load(path.string()); }

// --- subcommands --------------------------------------------------------------

void run_simulate_dict(const Common& c, const json& cfg) {
  const SequenceTrain seq = SequenceTrain::from_json(cfg.at("sequence"));
  const ParameterGrid grid = ParameterGrid::from_json(cfg.at("grid"));
  const bool normalize = cfg.value("normalize", true);
  const std::size_t budget = cfg.value("atom_budget", kDefaultAtomBudget);
  const Dictionary d = build_dictionary(seq, grid, normalize, budget);
  save_dictionary(c.out, d, seq, grid, provenance(c, cfg));
  std::cout << "dictionary: " << d.n_atoms << " atoms x " << d.t << " frames -> "
            << c.out << "\n";
}

void run_generate_dataset(const Common& c, const json& cfg) {
  const std::size_t h = cfg.at("height").get<std::size_t>();
  const std::size_t w = cfg.at("width").get<std::size_t>();
  const SequenceTrain seq = SequenceTrain::from_json(cfg.at("sequence"));
  const ParameterGrid grid = ParameterGrid::from_json(cfg.at("grid"));
  const json& splits = cfg.at("splits");
  // null snr_db means noise-free
  const double snr_db = (!cfg.contains("snr_db") || cfg.at("snr_db").is_null())
                            ? (cfg.contains("snr_db")
                                   ? std::numeric_limits<double>::infinity()
                                   : 20.0)
                            : cfg.at("snr_db").get<double>();
  std::optional<std::size_t> spokes;
  if (cfg.contains("spokes_per_frame") && !cfg.at("spokes_per_frame").is_null()) {
    spokes = cfg.at("spokes_per_frame").get<std::size_t>();
  }
  const bool snap = cfg.value("snap_to_grid", true);
  const std::size_t rmin = cfg.value("n_regions_min", 3);
  const std::size_t rmax = cfg.value("n_regions_max", 7);
  require(rmin >= 1 && rmax >= rmin, "need n_regions_max >= n_regions_min >= 1");

  json entries = json::array();
  std::size_t id = 0;
  for (const std::string split : {"train", "validation", "test"}) {
    const std::size_t count = splits.value(split, 0);
    for (std::size_t i = 0; i < count; ++i, ++id) {
      const std::uint64_t seed = mix_seed(c.seed, id + 1);
      Rng rng(mix_seed(seed, 0x726567ULL));
      const std::size_t n_regions = rmin + rng.index(rmax - rmin + 1);
      const Phantom ph = generate_phantom(h, w, n_regions, seed, grid, snap);
      const MrfImage clean = forward_simulate(ph, seq);
      const MrfImage corrupted = corrupt(clean, snr_db, spokes, mix_seed(seed, 1));

      const std::string rel = "subjects/" + split + "_" + std::to_string(id);
      const fs::path dir = fs::path(c.out) / rel;
      fs::create_directories(dir);
      const json prov = provenance(c, cfg);
      save_image(dir / "image.fpft", corrupted, prov);
      save_image(dir / "image_clean.fpft", clean, prov);
      save_maps(dir / "maps.fpft", ph.maps, prov);
      save_labels(dir / "labels.fpft", ph.region_labels, h, w);
      save_mask(dir / "foreground.fpft", ph.foreground);
      entries.push_back({{"id", id}, {"split", split}, {"seed", seed}, {"dir", rel}});
    }
  }
  write_json(fs::path(c.out) / "manifest.json",
             {{"kind", "dataset"},
              {"height", h},
              {"width", w},
              {"frames", seq.frames()},
              {"sequence", seq.to_json()},
              {"grid", grid.to_json()},
              {"snr_db", snr_db},
              {"spokes_per_frame", spokes ? json(*spokes) : json(nullptr)},
              {"snap_to_grid", snap},
              {"entries", entries},
              {"config", cfg},
              {"seed", c.seed}});
  std::cout << "dataset: " << id << " phantoms -> " << c.out << "\n";
}

void run_match(const Common& c, const json& cfg) {
  const LoadedDictionary ld = load_dictionary(cfg.at("dictionary").get<std::string>());
  const DatasetIndex ds = load_dataset_index(cfg.at("dataset").get<std::string>());
  const std::string split = cfg.value("split", "test");
  const bool use_clean = cfg.value("use_clean", false);
  std::optional<CompressedDictionary> compressed;
  if (cfg.contains("compress_rank") && !cfg.at("compress_rank").is_null()) {
    compressed = compress_dictionary(ld.dict, cfg.at("compress_rank").get<std::size_t>());
  }
  const auto entries = ds.split(split);
  require(!entries.empty(), "split has no subjects");
  const fs::path root = cfg.at("dataset").get<std::string>();
  json report = json::array();
  for (const auto& e : entries) {
    const fs::path sdir = root / e.dir;
    const MrfImage img = load_image(sdir / (use_clean ? "image_clean.fpft" : "image.fpft"));
    const Mask fg = load_mask(sdir / "foreground.fpft");
    const MatchResult r = match_image(img, ld.dict, ld.grid, &fg,
                                      compressed ? &*compressed : nullptr);
    const fs::path odir = fs::path(c.out) / e.dir;
    fs::create_directories(odir);
    save_maps(odir / "maps_matched.fpft", r.maps, provenance(c, cfg));
    report.push_back({{"id", e.id}, {"voxels_per_second", r.voxels_per_second}});
    std::cout << "matched subject " << e.id << "\n";
  }
  if (!c.deterministic) {
    write_json(fs::path(c.out) / "match_report.json", report);
  }
}

void run_build_arch(const Common& c, const json& cfg) {
  const ArchConfig ac = ArchConfig::from_json(cfg);
  const ArchSpec spec = build_architecture(ac);
  const json j = spec.to_json();
  write_json(fs::path(c.out) / "arch_spec.json", j);
  std::cout << j.dump(2) << "\n";
}

void run_sweep_arch(const Common& c, const json& cfg) {
  const json base = cfg.at("base");
  json out = json::array();
  for (const std::size_t r : cfg.at("receptive_fields").get<std::vector<std::size_t>>()) {
    for (const std::size_t np : cfg.at("n_params").get<std::vector<std::size_t>>()) {
      json jc = base;
      jc["receptive_field"] = r;
      jc["n_params"] = np;
      json item = {{"receptive_field", r}, {"n_params", np}};
      try {
        item["spec"] = build_architecture(ArchConfig::from_json(jc)).to_json();
      } catch (const std::invalid_argument& e) {
        item["error"] = e.what();
      }
      out.push_back(std::move(item));
    }
  }
  write_json(fs::path(c.out) / "sweep.json", out);
  std::cout << "sweep: " << out.size() << " configurations -> " << c.out << "\n";
}

std::vector<SubjectTensors<float>> load_split(const fs::path& root,
                                              const DatasetIndex& ds,
                                              const std::string& split,
                                              std::size_t max_subjects) {
  std::vector<SubjectTensors<float>> subs;
  for (const auto& e : ds.split(split)) {
    if (max_subjects > 0 && subs.size() >= max_subjects) break;
    const fs::path sdir = root / e.dir;
    const MrfImage img = load_image(sdir / "image.fpft");
    const ParametricMaps maps = load_maps(sdir / "maps.fpft");
    const Mask fg = load_mask(sdir / "foreground.fpft");
    subs.push_back(prepare_subject<float>(img, maps, fg, ds.grid));
  }
  return subs;
}

void run_train(const Common& c, const json& cfg) {
  const fs::path root = cfg.at("dataset").get<std::string>();
  const DatasetIndex ds = load_dataset_index(root);

  ArchSpec spec;
  if (cfg.contains("arch_spec")) {
    spec = ArchSpec::from_json(cfg.at("arch_spec").is_string()
                                   ? read_json(cfg.at("arch_spec").get<std::string>())
                                   : cfg.at("arch_spec"));
  } else {
    spec = build_architecture(ArchConfig::from_json(cfg.at("arch")));
  }
  require(spec.input_channels == 2 * ds.frames,
          "arch input_channels must equal 2 * dataset frames");
  const bool relu_first = cfg.value("relu_before_bn", true);

  TrainConfig tc;
  tc.epochs = cfg.value("epochs", 30);
  tc.batch_size = cfg.value("batch_size", 20);
  tc.lr = cfg.value("lr", 1e-3);
  tc.lr_final = cfg.value("lr_final", 0.0);
  tc.qp = cfg.value("qp", 32);
  tc.seed = c.seed;
  tc.batches_per_epoch = cfg.value("batches_per_epoch", 0);
  tc.val_patches_per_subject = cfg.value("val_patches_per_subject", 4);
  const std::size_t max_subjects = cfg.value("max_subjects", 0);

  const auto train_set = load_split(root, ds, cfg.value("train_split", "train"), max_subjects);
  const auto val_set =
      load_split(root, ds, cfg.value("validation_split", "validation"), max_subjects);
  require(!train_set.empty(), "training split is empty");

  Network<float> net(spec, mix_seed(c.seed, 0x696e6974ULL), relu_first);
  const TrainRecord rec = train(net, train_set, val_set, tc);

  fs::create_directories(c.out);
  net.save((fs::path(c.out) / "model.fpft").string());
  {
    std::ofstream f(fs::path(c.out) / "loss_curve.csv");
    f << "batch,loss\n";
    for (std::size_t i = 0; i < rec.batch_loss.size(); ++i) {
      f << i << "," << rec.batch_loss[i] << "\n";
    }
  }
  {
    std::ofstream f(fs::path(c.out) / "val_curve.csv");
    f << "epoch,val_nrmse\n";
    for (std::size_t i = 0; i < rec.val_nrmse.size(); ++i) {
      f << i << "," << rec.val_nrmse[i] << "\n";
    }
  }
  std::cout << "trained " << tc.epochs << " epochs x " << rec.batches_per_epoch
            << " batches; final loss " << rec.batch_loss.back() << " -> " << c.out
            << "\n";
}

void run_reconstruct(const Common& c, const json& cfg) {
  const fs::path root = cfg.at("dataset").get<std::string>();
  const DatasetIndex ds = load_dataset_index(root);
  Network<float> net = load_network(cfg.at("model").get<std::string>());
  const std::string split = cfg.value("split", "test");
  const bool use_clean = cfg.value("use_clean", false);
  const std::size_t qp = cfg.value("qp", 16);

  const auto entries = ds.split(split);
  require(!entries.empty(), "split has no subjects");
  for (const auto& e : entries) {
    const fs::path sdir = root / e.dir;
    const MrfImage img = load_image(sdir / (use_clean ? "image_clean.fpft" : "image.fpft"));
    const NormalizationState norm = compute_normalization(img, ds.grid);
    const ParametricMaps maps = reconstruct_slice(net, img, norm, qp);
    const fs::path odir = fs::path(c.out) / e.dir;
    fs::create_directories(odir);
    save_maps(odir / "maps_cnn.fpft", maps, provenance(c, cfg));
    std::cout << "reconstructed subject " << e.id << "\n";
  }
}

void run_evaluate(const Common& c, const json& cfg) {
  const fs::path root = cfg.at("dataset").get<std::string>();
  const DatasetIndex ds = load_dataset_index(root);
  const fs::path pred_root = cfg.at("pred").get<std::string>();
  const std::string pred_name = cfg.value("pred_name", "maps_cnn.fpft");
  const std::string split = cfg.value("split", "test");
  const double ff_thr = cfg.value("ff_threshold", kFfExclusionThreshold);

  const auto entries = ds.split(split);
  require(!entries.empty(), "split has no subjects");

  std::array<std::vector<double>, ParametricMaps::kNumMaps> nrmses, psnrs, ssims;
  std::array<std::vector<RoiPair>, ParametricMaps::kNumMaps> pooled_pairs;
  std::array<std::array<double, 9>, ParametricMaps::kNumMaps> blur_pred{}, blur_ref{};
  std::ofstream csv(fs::path(c.out) / "roi_pairs.csv");
  csv << "roi_id,map,ref_mean,pred_mean\n";

  for (std::size_t si = 0; si < entries.size(); ++si) {
    const auto& e = entries[si];
    const fs::path sdir = root / e.dir;
    const ParametricMaps ref = load_maps(sdir / "maps.fpft");
    const ParametricMaps pred = load_maps(pred_root / e.dir / pred_name);
    const Mask fg = load_mask(sdir / "foreground.fpft");
    const std::vector<int> labels = load_labels(sdir / "labels.fpft");
    const auto masks = apply_exclusions(ref, fg, ff_thr);

    for (std::size_t m = 0; m < ParametricMaps::kNumMaps; ++m) {
      const auto rm = ref.map(m);
      const auto pm = pred.map(m);
      if (masks[m].count() > 0) {
        nrmses[m].push_back(nrmse(rm, pm, masks[m]));
        psnrs[m].push_back(psnr(rm, pm, masks[m]));
      } else {
        // exclusions can empty a subject's mask (e.g. an all-fat phantom)
        nrmses[m].push_back(std::numeric_limits<double>::quiet_NaN());
        psnrs[m].push_back(std::numeric_limits<double>::quiet_NaN());
      }
      ssims[m].push_back(ssim(rm, pm, ref.h, ref.w));
      const auto br = blurriness(rm, ref.h, ref.w);
      const auto bp = blurriness(pm, ref.h, ref.w);
      for (std::size_t t = 0; t < 9; ++t) {
        blur_ref[m][t] += br[t] / static_cast<double>(entries.size());
        blur_pred[m][t] += bp[t] / static_cast<double>(entries.size());
      }
      for (const auto& pair : roi_means(rm, pm, labels, masks[m])) {
        RoiPair global = pair;
        global.roi_id = static_cast<int>(si * 1000) + pair.roi_id;
        pooled_pairs[m].push_back(global);
        csv << global.roi_id << "," << ParametricMaps::kMapNames[m] << ","
            << global.ref_mean << "," << global.pred_mean << "\n";
      }
    }
  }

  auto mean_std = [](const std::vector<double>& v) {
    double mean = 0.0;
    std::size_t finite = 0;
    for (double x : v) {
      if (std::isfinite(x)) {
        mean += x;
        ++finite;
      }
    }
    mean = finite > 0 ? mean / static_cast<double>(finite) : 0.0;
    double var = 0.0;
    for (double x : v) {
      if (std::isfinite(x)) var += (x - mean) * (x - mean);
    }
    var = finite > 1 ? var / static_cast<double>(finite - 1) : 0.0;
    return std::pair<double, double>(mean, std::sqrt(var));
  };

  json per_map = json::object();
  for (std::size_t m = 0; m < ParametricMaps::kNumMaps; ++m) {
    const auto [nm, ns] = mean_std(nrmses[m]);
    const auto [pm_, ps] = mean_std(psnrs[m]);
    const auto [sm, ss] = mean_std(ssims[m]);
    json entry = {{"nrmse_mean", nm},   {"nrmse_std", ns}, {"psnr_mean", pm_},
                  {"psnr_std", ps},     {"ssim_mean", sm}, {"ssim_std", ss},
                  {"nrmse_per_subject", nrmses[m]},
                  {"blurriness_ref", blur_ref[m]},
                  {"blurriness_pred", blur_pred[m]},
                  {"exclusions", m == ParametricMaps::kT1H2O
                                     ? json::array({"background", "ff_gt_threshold"})
                                     : json::array({"background"})}};
    if (pooled_pairs[m].size() >= 3) {
      try {
        const RegressionResult r = roi_regression(pooled_pairs[m]);
        const BlandAltman ba = bland_altman(pooled_pairs[m]);
        entry["r2"] = r.r2;
        entry["slope"] = r.slope;
        entry["intercept"] = r.intercept;
        entry["bland_altman"] = {{"bias", ba.bias}, {"lower", ba.lower}, {"upper", ba.upper}};
      } catch (const std::invalid_argument&) {
        entry["r2"] = nullptr;  // degenerate ROI means
      }
    }
    per_map[ParametricMaps::kMapNames[m]] = std::move(entry);
  }
  const json report = {{"kind", "eval_report"},
                       {"split", split},
                       {"pred_name", pred_name},
                       {"n_subjects", entries.size()},
                       {"ff_threshold", ff_thr},
                       {"per_map", per_map}};
  write_json(fs::path(c.out) / "eval_report.json", report);
  for (std::size_t m = 0; m < ParametricMaps::kNumMaps; ++m) {
    std::cout << ParametricMaps::kMapNames[m] << ": nrmse "
              << per_map[ParametricMaps::kMapNames[m]]["nrmse_mean"].get<double>()
              << "\n";
  }
}

void run_blurriness(const Common& c, const json& cfg) {
  const ParametricMaps maps = load_maps(cfg.at("maps").get<std::string>());
  json out = {{"thresholds", kBlurrinessThresholds}};
  for (std::size_t m = 0; m < ParametricMaps::kNumMaps; ++m) {
    out[ParametricMaps::kMapNames[m]] = blurriness(maps.map(m), maps.h, maps.w);
  }
  write_json(fs::path(c.out) / "blurriness.json", out);
  std::cout << out.dump(2) << "\n";
}

void run_perm_importance(const Common& c, const json& cfg) {
  const fs::path root = cfg.at("dataset").get<std::string>();
  const DatasetIndex ds = load_dataset_index(root);
  Network<float> net = load_network(cfg.at("model").get<std::string>());
  const std::string split = cfg.value("split", "test");
  const std::size_t subject_index = cfg.value("subject_index", 0);
  const std::size_t qp = cfg.value("qp", 16);
  const bool use_clean = cfg.value("use_clean", false);
  std::vector<std::uint64_t> seeds = cfg.value("seeds", std::vector<std::uint64_t>{1, 2, 3});
  std::vector<std::size_t> frames;
  if (cfg.contains("frames")) {
    frames = cfg.at("frames").get<std::vector<std::size_t>>();
  } else {
    for (std::size_t f = 0; f < ds.frames; ++f) frames.push_back(f);
  }

  const auto entries = ds.split(split);
  require(subject_index < entries.size(), "subject_index out of range for split");
  const fs::path sdir = root / entries[subject_index].dir;
  const MrfImage img = load_image(sdir / (use_clean ? "image_clean.fpft" : "image.fpft"));
  const ParametricMaps ref = load_maps(sdir / "maps.fpft");
  const Mask fg = load_mask(sdir / "foreground.fpft");
  const NormalizationState norm = compute_normalization(img, ds.grid);

  std::ofstream csv(fs::path(c.out) / "perm_importance.csv");
  csv << "frame,map,importance\n";
  json out = json::object();
  for (const std::size_t f : frames) {
    const auto imp = permutation_importance(net, img, norm, ref, fg, qp, f, seeds);
    json row = json::object();
    for (std::size_t m = 0; m < ParametricMaps::kNumMaps; ++m) {
      row[ParametricMaps::kMapNames[m]] = imp[m];
      csv << f << "," << ParametricMaps::kMapNames[m] << "," << imp[m] << "\n";
    }
    out[std::to_string(f)] = std::move(row);
    std::cout << "frame " << f << " done\n";
  }
  write_json(fs::path(c.out) / "perm_importance.json",
             {{"frames", out}, {"seeds", seeds}, {"subject_index", subject_index}});
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fingerprint-forge: desk-scale MRF reconstruction laboratory"};
  app.require_subcommand(1);

  struct Sub {
    const char* name;
    const char* desc;
    void (*fn)(const Common&, const json&);
    bool config_required;
  };
  const std::vector<Sub> subs = {
      {"simulate-dict", "simulate a fingerprint dictionary", run_simulate_dict, true},
      {"generate-dataset", "generate a synthetic phantom dataset", run_generate_dataset, true},
      {"match", "dictionary-match a dataset split", run_match, true},
      {"build-arch", "run the architecture builder on an ArchConfig", run_build_arch, true},
      {"sweep-arch", "build specs over a receptive-field x budget grid", run_sweep_arch, true},
      {"train", "train a network on a dataset", run_train, true},
      {"reconstruct", "reconstruct a dataset split with a trained model", run_reconstruct, true},
      {"evaluate", "evaluate predicted maps against ground truth", run_evaluate, true},
      {"blurriness", "blurriness curves of a maps container", run_blurriness, true},
      {"perm-importance", "temporal permutation importance", run_perm_importance, true},
  };

  std::vector<Common> commons(subs.size());
  std::vector<CLI::App*> cmds(subs.size());
  for (std::size_t i = 0; i < subs.size(); ++i) {
    cmds[i] = app.add_subcommand(subs[i].name, subs[i].desc);
    add_common(cmds[i], commons[i], subs[i].config_required);
  }

  CLI11_PARSE(app, argc, argv);

  for (std::size_t i = 0; i < subs.size(); ++i) {
    if (!cmds[i]->parsed()) continue;
    const Common& c = commons[i];
    json cfg;
    try {
      cfg = load_config(c);
    } catch (const std::exception& e) {
      std::cerr << "config error: " << e.what() << "\n";
      return 2;
    }
    try {
      fs::create_directories(c.out);
      const auto t0 = std::chrono::steady_clock::now();
      subs[i].fn(c, cfg);
      const double secs =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      if (std::string(subs[i].name) != "generate-dataset") {
        write_manifest(c, subs[i].name, cfg, secs);
      } else if (!c.deterministic) {
        write_json(fs::path(c.out) / "timings.json", {{"duration_seconds", secs}});
      }
      return 0;
    } catch (const json::exception& e) {
      std::cerr << "config error: " << e.what() << "\n";
      return 2;
    } catch (const std::invalid_argument& e) {
      std::cerr << "config error: " << e.what() << "\n";
      return 2;
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      return 1;
    }
  }
  return 1;
}
