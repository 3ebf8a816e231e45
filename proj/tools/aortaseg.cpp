#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "aortaseg/aortaseg.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace aortaseg;

namespace
{

/// Bad input the user can fix: maps to exit status 2.
struct UsageError : std::runtime_error
{
  using std::runtime_error::runtime_error;
};

void require_exists(const fs::path & p, const char * what)
{
  if (!fs::exists(p)) {throw UsageError(std::string(what) + " not found: " + p.string());}
}

void write_text(const fs::path & path, const std::string & text)
{
  if (path.has_parent_path()) {fs::create_directories(path.parent_path());}
  aortaseg::detail::write_all(path, std::vector<unsigned char>(text.begin(), text.end()), false);
}

std::string utc_now()
{
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Run record written next to every command's outputs.
struct Manifest
{
  json doc;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  Manifest(const std::string & command, int argc, char ** argv)
  {
    std::vector<std::string> args(argv, argv + argc);
    doc = {{"tool", "aortaseg"}, {"version", kVersion}, {"command", command}, {"argv", args},
      {"started_utc", utc_now()}};
  }

  void write(const fs::path & path)
  {
    doc["wall_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    write_text(path, doc.dump(2) + "\n");
  }
};

bool is_volume_file(const fs::path & p)
{
  const auto s = p.filename().string();
  return aortaseg::detail::ends_with(s, ".nii.gz") || aortaseg::detail::ends_with(s, ".nii") ||
         aortaseg::detail::ends_with(s, ".vol");
}

std::vector<fs::path> volume_files(const fs::path & dir)
{
  std::vector<fs::path> out;
  for (const auto & e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && is_volume_file(e.path())) {out.push_back(e.path());}
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::string fmt_double(double v)
{
  if (std::isinf(v)) {return v > 0 ? "inf" : "-inf";}
  char b[64];
  std::snprintf(b, sizeof(b), "%.6f", v);
  return b;
}

// ---------------------------------------------------------------- phantom

struct PhantomArgs
{
  Index n = 20;
  fs::path out;
  std::uint64_t seed = 0;
  std::vector<Index> shape{64, 64, 64};
  double offset_fraction = 0.0;
  Index folds = 5;
};

int cmd_phantom(const PhantomArgs & a, Manifest & man)
{
  PhantomDatasetOptions opt;
  if (a.shape.size() == 1) {
    opt.base.shape.fill(a.shape[0]);
  } else if (a.shape.size() == 3) {
    std::copy(a.shape.begin(), a.shape.end(), opt.base.shape.begin());
  } else {
    throw UsageError("--shape takes 1 or 3 values");
  }
  opt.offset_fraction = a.offset_fraction;
  opt.folds = a.folds;
  const auto dl = generate_dataset(a.n, a.out, a.seed, opt);
  man.doc["phantom"] = {{"n", a.n}, {"seed", a.seed}, {"shape", opt.base.shape},
    {"offset_fraction", a.offset_fraction}, {"folds", a.folds}, {"datalist", (a.out / "dataset.json").string()}};
  man.write(a.out / "manifest.json");
  std::cout << "wrote " << dl.entries.size() << " cases to " << a.out.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------- split

struct SplitArgs
{
  fs::path datalist;
  fs::path output;
  Index k = 5;
  std::uint64_t seed = 0;
};

int cmd_split(const SplitArgs & a, Manifest & man)
{
  require_exists(a.datalist, "datalist");
  auto dl = load_datalist(a.datalist);
  std::vector<std::string> ids;
  for (const auto & e : dl.entries) {ids.push_back(e.case_id);}
  const auto folds = make_folds(ids, a.k, a.seed);
  for (std::size_t i = 0; i < folds.size(); ++i) {dl.entries[i].fold = folds[i];}
  const fs::path out = a.output.empty() ? a.datalist.parent_path() / "dataset.json" : a.output;
  save_datalist(dl, out, fs::absolute(out).parent_path());
  man.doc["split"] = {{"k", a.k}, {"seed", a.seed}, {"cases", ids.size()}, {"output", out.string()}};
  man.write(fs::path(out).replace_extension(".manifest.json"));
  std::cout << "wrote " << out.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------- train

struct TrainArgs
{
  fs::path config;
  fs::path ckpt_dir = "ckpt";
  Index fold = -1;
  Index repeat = -1;
  bool resume = false;
  Index epochs = 0;
  bool paper_literal = false;
};

int cmd_train(const TrainArgs & a, Manifest & man)
{
  require_exists(a.config, "config");
  ExperimentConfig cfg = load_experiment_config(a.config);
  if (a.epochs > 0) {cfg.train.epochs = a.epochs;}
  if (a.paper_literal) {cfg.train.paper_literal = true;}
  cfg.train.validate();
  require_exists(cfg.datalist, "datalist");
  const auto dl = load_datalist(cfg.datalist, cfg.dataroot);
  for (const auto & e : dl.entries) {
    require_exists(e.image, "image");
    require_exists(e.label, "label");
  }
  fs::create_directories(a.ckpt_dir);
  std::ofstream log(a.ckpt_dir / "train_log.jsonl", std::ios::app);
  const TrainLogger logger = [&](Index f, Index r, const EpochLog & el) {
      json j = {{"fold", f}, {"repeat", r}, {"epoch", el.epoch}, {"train_loss", el.train_loss},
        {"lr", el.lr}, {"seconds", el.seconds}};
      if (!std::isnan(el.val_dice)) {j["val_dice"] = el.val_dice;}
      log << j.dump() << "\n" << std::flush;
      std::cerr << "fold " << f << " rep " << r << " epoch " << el.epoch << " loss " << el.train_loss
                << (std::isnan(el.val_dice) ? "" : " val_dice " + fmt_double(el.val_dice)) << "\n";
    };
  man.doc["config"] = {{"modality", cfg.modality}, {"datalist", cfg.datalist.string()},
    {"dataroot", cfg.dataroot.string()}, {"train", to_json(cfg.train)}};

  json runs = json::array();
  if (a.fold >= 0 || a.repeat >= 0) {
    if (a.fold < 0 || a.repeat < 0) {throw UsageError("--fold and --repeat must be given together");}
    const auto path = checkpoint_path(a.ckpt_dir, a.fold, a.repeat);
    if (a.resume && fs::exists(path)) {
      std::cout << "skipping existing " << path.string() << "\n";
    } else {
      auto r = train_fold(cfg.train, dl, a.fold, a.repeat, logger);
      save_checkpoint(r.best, path);
    }
    runs.push_back(path.string());
  } else {
    const auto r = train_all(cfg.train, dl, a.ckpt_dir, a.resume, logger);
    for (const auto & p : r.checkpoints) {runs.push_back(p.string());}
    man.doc["failures"] = r.failures;
    if (!r.failures.empty()) {
      man.write(a.ckpt_dir / "manifest.json");
      for (const auto & f : r.failures) {std::cerr << "error: train: " << f << "\n";}
      return 1;
    }
  }
  man.doc["checkpoints"] = runs;
  man.write(a.ckpt_dir / "manifest.json");
  std::cout << "checkpoints: " << runs.size() << "\n";
  return 0;
}

// ---------------------------------------------------------------- infer

struct InferArgs
{
  fs::path ckpt_dir;
  fs::path input;
  fs::path output;
  std::vector<Index> roi;
  double overlap = 0.25;
  bool paper_literal = false;
  bool no_postfilter = false;
  fs::path report;
};

int cmd_infer(const InferArgs & a, Index jobs, Manifest & man)
{
  require_exists(a.ckpt_dir, "checkpoint directory");
  require_exists(a.input, "input");
  const auto ckpts = load_checkpoint_dir(a.ckpt_dir);
  if (ckpts.empty()) {throw UsageError("no checkpoints under " + a.ckpt_dir.string());}
  InferConfig cfg;
  cfg.roi_size = ckpts.front().roi_size;
  if (a.roi.size() == 1) {
    cfg.roi_size.fill(a.roi[0]);
  } else if (a.roi.size() == 3) {
    std::copy(a.roi.begin(), a.roi.end(), cfg.roi_size.begin());
  } else if (!a.roi.empty()) {
    throw UsageError("--roi takes 1 or 3 values");
  }
  cfg.overlap = a.overlap;
  cfg.paper_literal = a.paper_literal;
  cfg.postfilter = !a.no_postfilter;
  cfg.jobs = jobs;
  cfg.softclip_k = ckpts.front().softclip_k;
  cfg.percentile_lo = ckpts.front().percentile_lo;
  cfg.percentile_hi = ckpts.front().percentile_hi;
  Index folds = 0;
  for (const auto & c : ckpts) {folds += c.repeat == 0 && c.normalization_mode == NormalizationMode::zscore;}
  cfg.stage1_count = folds;
  cfg.validate();

  std::vector<EnsembleMember> members;
  for (const auto & c : ckpts) {members.push_back(EnsembleMember::from_checkpoint(c));}

  std::vector<std::pair<fs::path, fs::path>> jobs_list;
  if (fs::is_directory(a.input)) {
    fs::create_directories(a.output);
    for (const auto & p : volume_files(a.input)) {jobs_list.emplace_back(p, a.output / p.filename());}
  } else {
    jobs_list.emplace_back(a.input, a.output);
  }
  json cases = json::array();
  for (const auto & [in, out] : jobs_list) {
    const Volume img = load_volume(in, VolumeKind::image);
    const auto res = two_stage_predict(members, img, ckpts.front().target_spacing, cfg);
    save_volume(res.mask, out);
    json r = res.report.to_json();
    r["input"] = in.string();
    r["output"] = out.string();
    cases.push_back(r);
    std::cerr << in.filename().string() << ": " << res.mask.count_nonzero() << " foreground voxels"
              << (res.report.fallback ? " (fallback)" : "") << "\n";
  }
  json report = {{"checkpoints", ckpts.size()}, {"infer", to_json(cfg)}, {"cases", cases}};
  if (!a.report.empty()) {write_text(a.report, report.dump(2) + "\n");}
  man.doc["infer"] = report;
  const fs::path mdir = fs::is_directory(a.output) ? a.output : a.output.parent_path();
  man.write((mdir.empty() ? fs::path(".") : mdir) / "infer_manifest.json");
  return 0;
}

// ---------------------------------------------------------------- evaluate

struct EvaluateArgs
{
  fs::path pred;
  fs::path gt;
  fs::path output = "evaluation.csv";
};

int cmd_evaluate(const EvaluateArgs & a, Manifest & man)
{
  require_exists(a.pred, "prediction directory");
  require_exists(a.gt, "ground-truth directory");
  std::map<std::string, fs::path> gts;
  for (const auto & p : volume_files(a.gt)) {gts[case_id_from_path(p)] = p;}
  std::vector<EvalResult> rows;
  for (const auto & p : volume_files(a.pred)) {
    const auto id = case_id_from_path(p);
    const auto it = gts.find(id);
    if (it == gts.end()) {
      warn("evaluate: no ground truth for '" + id + "'");
      continue;
    }
    const Volume pv = binarize(load_volume(p, VolumeKind::label));
    const Volume gv = binarize(load_volume(it->second, VolumeKind::label));
    if (pv.shape() != gv.shape()) {throw UsageError("'" + id + "': prediction and ground truth shapes differ");}
    rows.push_back({id, dice_score(pv, gv), hd95(pv, gv, gv.spacing())});
  }
  if (rows.empty()) {throw UsageError("no prediction files match the ground truth");}
  std::vector<double> d;
  std::vector<double> h;
  std::ostringstream csv;
  csv << "case_id,dice,hd95\n";
  for (const auto & r : rows) {
    csv << r.case_id << "," << fmt_double(r.dice) << "," << fmt_double(r.hd95) << "\n";
    d.push_back(r.dice);
    h.push_back(r.hd95);
  }
  auto mean = [](const std::vector<double> & v) {
      double s = 0.0;
      for (double x : v) {s += x;}
      return s / static_cast<double>(v.size());
    };
  const double md = mean(d);
  const double mh = mean(h);
  csv << "mean," << fmt_double(md) << "," << fmt_double(mh) << "\n";
  csv << "median," << fmt_double(percentile(d, 50.0)) << "," << fmt_double(percentile(h, 50.0)) << "\n";
  // Population standard deviation; an infinite HD95 makes its spread infinite too.
  auto stdev = [&](const std::vector<double> & v) {
      const double m = mean(v);
      if (std::isinf(m)) {return m;}
      double s = 0.0;
      for (double x : v) {s += (x - m) * (x - m);}
      return std::sqrt(s / static_cast<double>(v.size()));
    };
  csv << "std," << fmt_double(stdev(d)) << "," << fmt_double(stdev(h)) << "\n";
  write_text(a.output, csv.str());
  man.doc["evaluate"] = {{"cases", rows.size()}, {"mean_dice", md}, {"mean_hd95", std::isinf(mh) ? json("inf") : json(mh)},
    {"output", a.output.string()}};
  man.write(fs::path(a.output).replace_extension(".manifest.json"));
  std::cout << "mean dice " << fmt_double(md) << " mean hd95 " << fmt_double(mh) << " over " << rows.size() << " cases\n";
  return 0;
}

// ---------------------------------------------------------------- mesh

struct MeshArgs
{
  fs::path input;
  fs::path output;
  std::string format = "stl";
  Index smooth_iters = 0;
};

int cmd_mesh(const MeshArgs & a, Manifest & man)
{
  require_exists(a.input, "mask");
  const auto fmt = mesh_format_from_string(a.format);
  const Volume mask = binarize(load_volume(a.input, VolumeKind::label));
  if (mask.count_nonzero() == 0) {throw UsageError("mask " + a.input.string() + " is empty");}
  const TriMesh m = marching_cubes(mask, 0.5, a.smooth_iters);
  save_mesh(m, a.output, fmt);
  const auto st = mesh_stats(m);
  const json stats = {{"watertight", st.watertight}, {"euler", st.euler}, {"volume_mm3", st.volume},
    {"area_mm2", st.area}, {"n_components", st.n_components}, {"vertices", st.n_vertices},
    {"triangles", st.n_triangles}};
  man.doc["mesh"] = {{"format", a.format}, {"smooth_iters", a.smooth_iters}, {"stats", stats}};
  man.write(fs::path(a.output).replace_extension(".manifest.json"));
  std::cout << stats.dump() << "\n";
  return 0;
}

// ---------------------------------------------------------------- report

struct ReportArgs
{
  fs::path ckpt_dir;
  fs::path eval_csv;
  fs::path output;
};

int cmd_report(const ReportArgs & a, Manifest & man)
{
  if (a.ckpt_dir.empty() && a.eval_csv.empty()) {throw UsageError("report needs --ckpt-dir and/or --eval-csv");}
  json rep;
  if (!a.ckpt_dir.empty()) {
    require_exists(a.ckpt_dir, "checkpoint directory");
    json arr = json::array();
    for (const auto & c : load_checkpoint_dir(a.ckpt_dir)) {
      arr.push_back({{"fold", c.fold}, {"repeat", c.repeat}, {"normalization_mode", to_string(c.normalization_mode)},
        {"best_val_dice", c.best_val_dice}, {"best_epoch", c.best_epoch}, {"seed", c.seed}});
    }
    rep["checkpoints"] = arr;
  }
  if (!a.eval_csv.empty()) {
    require_exists(a.eval_csv, "evaluation CSV");
    std::ifstream in(a.eval_csv);
    std::string line;
    std::getline(in, line);
    json rows = json::array();
    while (std::getline(in, line)) {
      std::stringstream ss(line);
      std::string id, dice, h;
      std::getline(ss, id, ',');
      std::getline(ss, dice, ',');
      std::getline(ss, h, ',');
      rows.push_back({{"case_id", id}, {"dice", std::stod(dice)}, {"hd95", h}});
    }
    rep["evaluation"] = rows;
  }
  const std::string text = rep.dump(2) + "\n";
  if (a.output.empty()) {
    std::cout << text;
  } else {
    write_text(a.output, text);
    man.doc["report"] = {{"output", a.output.string()}};
    man.write(fs::path(a.output).replace_extension(".manifest.json"));
  }
  return 0;
}

}  // namespace

int main(int argc, char ** argv)
{
  CLI::App app{"Aortic vessel tree segmentation pipeline"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);
  Index jobs = 1;
  app.add_option("--jobs", jobs, "Maximum worker threads")->check(CLI::PositiveNumber);

  PhantomArgs pa;
  auto * phantom = app.add_subcommand("phantom", "Generate a synthetic phantom dataset");
  phantom->add_option("--n", pa.n, "Number of cases")->check(CLI::PositiveNumber);
  phantom->add_option("--out", pa.out, "Output directory")->required();
  phantom->add_option("--seed", pa.seed, "Random seed");
  phantom->add_option("--shape", pa.shape, "Volume shape (1 or 3 values)");
  phantom->add_option("--offset-fraction", pa.offset_fraction, "Fraction of cases with a +1024 intensity offset")
  ->check(CLI::Range(0.0, 1.0));
  phantom->add_option("--folds", pa.folds, "Folds in the written datalist")->check(CLI::Range(2, 1000));

  SplitArgs sa;
  auto * split = app.add_subcommand("split", "Assign random cross-validation folds");
  split->add_option("--datalist", sa.datalist, "Case list JSON")->required();
  split->add_option("--k", sa.k, "Number of folds")->check(CLI::Range(2, 1000));
  split->add_option("--seed", sa.seed, "Random seed");
  split->add_option("--output", sa.output, "Output datalist (default: dataset.json beside the input)");

  TrainArgs ta;
  auto * train = app.add_subcommand("train", "Train the fold x repeat ensemble");
  train->add_option("--config", ta.config, "Experiment YAML")->required();
  train->add_option("--ckpt-dir", ta.ckpt_dir, "Checkpoint directory");
  train->add_option("--fold", ta.fold, "Train a single fold");
  train->add_option("--repeat", ta.repeat, "Repeat index for --fold");
  train->add_flag("--resume", ta.resume, "Skip runs whose checkpoint exists");
  train->add_option("--epochs", ta.epochs, "Override the epoch count");
  train->add_flag("--paper-literal", ta.paper_literal, "Train every repeat on z-scored input");

  InferArgs ia;
  auto * infer = app.add_subcommand("infer", "Two-stage ensemble inference");
  infer->add_option("--ckpt-dir", ia.ckpt_dir, "Checkpoint directory")->required();
  infer->add_option("--input", ia.input, "Image file or directory")->required();
  infer->add_option("--output", ia.output, "Mask file or directory")->required();
  infer->add_option("--roi", ia.roi, "Window size (1 or 3 values)");
  infer->add_option("--overlap", ia.overlap, "Window overlap fraction")->check(CLI::Range(0.0, 0.999));
  infer->add_flag("--paper-literal", ia.paper_literal, "Stage-2 members were trained on z-scored input");
  infer->add_flag("--no-postfilter", ia.no_postfilter, "Keep every connected component");
  infer->add_option("--report", ia.report, "JSON report path");

  EvaluateArgs ea;
  auto * evaluate = app.add_subcommand("evaluate", "Dice and HD95 of predicted masks");
  evaluate->add_option("--pred", ea.pred, "Prediction directory")->required();
  evaluate->add_option("--gt", ea.gt, "Ground-truth directory")->required();
  evaluate->add_option("--output", ea.output, "CSV path");

  MeshArgs ma;
  auto * mesh = app.add_subcommand("mesh", "Surface mesh from a binary mask");
  mesh->add_option("--input", ma.input, "Mask volume")->required();
  mesh->add_option("--output", ma.output, "Mesh file")->required();
  mesh->add_option("--format", ma.format, "stl or obj")->check(CLI::IsMember({"stl", "obj"}));
  mesh->add_option("--smooth-iters", ma.smooth_iters, "Taubin smoothing iterations")->check(CLI::NonNegativeNumber);

  ReportArgs ra;
  auto * report = app.add_subcommand("report", "Summarise checkpoints and evaluation results");
  report->add_option("--ckpt-dir", ra.ckpt_dir, "Checkpoint directory");
  report->add_option("--eval-csv", ra.eval_csv, "Evaluation CSV");
  report->add_option("--output", ra.output, "JSON output (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp & e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion & e) {
    return app.exit(e);
  } catch (const CLI::ParseError & e) {
    std::cerr << "error: usage: " << e.what() << "\n";
    return 2;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  Manifest man(name, argc, argv);
  man.doc["jobs"] = jobs;
  man.doc["warnings"] = json::array();
  ScopedWarningCapture capture([&](const std::string & w) {
      man.doc["warnings"].push_back(w);
      std::cerr << "warning: " << w << "\n";
    });
  try {
    if (*phantom) {return cmd_phantom(pa, man);}
    if (*split) {return cmd_split(sa, man);}
    if (*train) {return cmd_train(ta, man);}
    if (*infer) {return cmd_infer(ia, jobs, man);}
    if (*evaluate) {return cmd_evaluate(ea, man);}
    if (*mesh) {return cmd_mesh(ma, man);}
    if (*report) {return cmd_report(ra, man);}
  } catch (const UsageError & e) {
    std::cerr << "error: usage: " << e.what() << "\n";
    return 2;
  } catch (const InvalidArgument & e) {
    std::cerr << "error: invalid: " << e.what() << "\n";
    return 2;
  } catch (const IoError & e) {
    std::cerr << "error: io: " << e.what() << "\n";
    return 1;
  } catch (const std::exception & e) {
    std::cerr << "error: runtime: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
