// SPDX-License-Identifier: Apache-2.0
// metaseq: train, evaluate and probe the sequential metaphor tagger.

#include <openssl/evp.h>

#include <CLI11.hpp>
#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <map>
#include <mutex>
#include <optional>
#include <thread>

#include "metaseq/metaseq.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace metaseq;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kUsage: return kExitUsage;
    case ErrorKind::kNumeric:
    case ErrorKind::kDegeneracy: return kExitNumeric;
    default: return kExitData;
  }
}

std::string sha256_file(const std::string& path) {
  const std::string bytes = detail::read_file_bytes(path);
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    fail(ErrorKind::kIo, "sha256 failed for '", path, "'");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

// One manifest per run. No timestamps or host data so equal runs give equal files.
class Manifest {
 public:
  explicit Manifest(std::string command) { doc_["command"] = std::move(command); }

  void config(const std::string& path, const ModelConfig* cfg) {
    doc_["config_path"] = path.empty() ? json(nullptr) : json(path);
    if (cfg) doc_["config"] = cfg->to_text();
  }
  void seed(std::uint64_t s) { doc_["seed"] = s; }
  void param(const std::string& key, json value) { doc_["parameters"][key] = std::move(value); }
  void input(const std::string& role, const std::string& path) {
    doc_["inputs"].push_back({{"role", role}, {"path", path}, {"sha256", sha256_file(path)}});
  }
  void output(const fs::path& p) { outputs_.push_back(p.string()); }

  void write(const fs::path& dir) {
    const fs::path p = dir / "manifest.json";
    outputs_.push_back(p.string());
    doc_["outputs"] = outputs_;
    doc_["version"] = std::string(kVersion);
    std::ofstream out(p, std::ios::binary);
    if (!out) fail(ErrorKind::kIo, "cannot write '", p.string(), "'");
    out << doc_.dump(2) << '\n';
  }

 private:
  json doc_;
  std::vector<std::string> outputs_;
};

std::ofstream open_out(const fs::path& p) {
  std::ofstream out(p, std::ios::binary);
  if (!out) fail(ErrorKind::kIo, "cannot write '", p.string(), "'");
  return out;
}

std::uint64_t default_seed() {
  if (const char* env = std::getenv("METASEQ_SEED"); env && *env) {
    try {
      return detail::parse_number<std::uint64_t>("METASEQ_SEED", env);
    } catch (const Error& e) {
      fail(ErrorKind::kUsage, e.what());
    }
  }
  return ModelConfig{}.seed;
}

// Inputs shared by train / eval / crossval.
struct FeatureArgs {
  std::string glove;
  std::vector<std::string> layers;
  std::string abstractness;

  void add_to(CLI::App* app) {
    app->add_option("--glove", glove, "static vectors (text format)")->check(CLI::ExistingFile);
    app->add_option("--layers", layers, "contextual layer files, one per E/B channel in order")
        ->check(CLI::ExistingFile);
    app->add_option("--abstractness", abstractness, "abstractness lexicon (word TAB score)")->check(CLI::ExistingFile);
  }
};

struct LoadedFeatures {
  StaticEmbeddingTable glove;
  AbstractnessLexicon lexicon;
  std::optional<AbstractnessScorer> scorer;
  std::vector<ContextualLayerFile> layers;

  FeatureSources sources() const {
    FeatureSources s;
    if (glove.dimension() > 0) s.glove = &glove;
    if (scorer) s.abstractness = &*scorer;
    for (const auto& l : layers) s.layers.push_back(&l);
    return s;
  }
};

// Heap-allocated so the scorer's pointers into glove/lexicon stay valid.
std::unique_ptr<LoadedFeatures> load_features(const FeatureArgs& args, const ModelConfig& cfg, Manifest& manifest) {
  if (cfg.has_channel(Channel::kGlove) && args.glove.empty()) {
    fail(ErrorKind::kUsage, "--glove is required when the G channel is enabled");
  }
  if (args.layers.size() != cfg.contextual_channels()) {
    fail(ErrorKind::kUsage, "channels ", channels_string(cfg.channels), " need ", cfg.contextual_channels(),
         " --layers file(s), got ", args.layers.size());
  }
  if (cfg.use_abst && args.abstractness.empty()) fail(ErrorKind::kUsage, "use_abst needs --abstractness");
  auto f = std::make_unique<LoadedFeatures>();
  if (!args.glove.empty()) {
    f->glove = load_static_text(args.glove);
    manifest.input("glove", args.glove);
  }
  if (!args.abstractness.empty()) {
    f->lexicon = load_lexicon(args.abstractness, cfg.lowercase_lookup);
    f->scorer.emplace(f->lexicon, f->glove);
    manifest.input("abstractness", args.abstractness);
  }
  for (const auto& p : args.layers) {
    f->layers.push_back(load_contextual(p));
    manifest.input("layer", p);
  }
  return f;
}

// Config precedence: built-in defaults < METASEQ_SEED < --config file < flags.
struct ConfigArgs {
  std::string path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;

  void add_to(CLI::App* app) {
    app->add_option("--config", path, "key = value model config")->check(CLI::ExistingFile);
    app->add_option("--set", overrides, "override one config key (key=value), repeatable");
    app->add_option("--seed", seed, "run seed (default: METASEQ_SEED or 42)");
    app->add_option("--epochs", epochs, "number of epochs");
  }

  ModelConfig resolve() const {
    ModelConfig cfg;
    cfg.seed = default_seed();
    if (!path.empty()) cfg.apply_text(detail::read_file_bytes(path), path);
    for (const auto& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) fail(ErrorKind::kUsage, "--set expects key=value, got '", kv, "'");
      try {
        cfg.set(detail::trim(std::string_view(kv).substr(0, eq)), std::string_view(kv).substr(eq + 1));
      } catch (const Error& e) {
        fail(ErrorKind::kUsage, e.what());
      }
    }
    if (seed) cfg.seed = *seed;
    if (epochs) cfg.epochs = *epochs;
    cfg.validate();
    return cfg;
  }
};

std::vector<SentenceInput> build_inputs(const std::vector<SentenceRecord>& data, const LoadedFeatures& f,
                                        const ModelConfig& cfg) {
  for (const auto& l : f.layers) check_alignment(data, l);
  return assemble_inputs(data, f.sources(), cfg);
}

void write_breakdown(std::ostream& out, std::string_view split, const std::vector<ScoredToken>& tokens,
                     const std::string& mode) {
  if (mode.empty()) return;
  const auto b = breakdown(tokens, mode == "genre" ? BreakdownKey::kGenre : BreakdownKey::kPos);
  for (const auto& [cls, r] : b.rows) write_metrics_row(out, split, cls, r);
  for (const auto& note : b.notes) std::cerr << "note: " << note << '\n';
}

// ---------------------------------------------------------------------------

struct TrainCmd {
  std::string data, dev, out = "run";
  std::vector<std::string> dev_layers;
  FeatureArgs features;
  ConfigArgs config;

  void add(CLI::App& root) {
    auto* app = root.add_subcommand("train", "train a tagger, keeping the best-dev-F1 checkpoint");
    app->add_option("--data", data, "training dataset TSV")->required()->check(CLI::ExistingFile);
    app->add_option("--dev", dev, "development dataset TSV (default: training data)")->check(CLI::ExistingFile);
    app->add_option("--dev-layers", dev_layers, "contextual layer files for --dev")->check(CLI::ExistingFile);
    app->add_option("--out", out, "output directory");
    features.add_to(app);
    config.add_to(app);
    app->callback([this] { run(); });
  }

  void run() {
    if (features.glove.empty()) fail(ErrorKind::kUsage, "train: --glove is required");
    const ModelConfig cfg = config.resolve();
    Manifest manifest("train");
    manifest.config(config.path, &cfg);
    manifest.seed(cfg.seed);
    const auto train_data = parse_dataset(data);
    manifest.input("data", data);
    const auto f = load_features(features, cfg, manifest);
    const auto train_in = build_inputs(train_data, *f, cfg);

    std::vector<SentenceInput> dev_in;
    if (!dev.empty()) {
      FeatureArgs dev_args = features;
      dev_args.layers = dev_layers;
      const auto dev_data = parse_dataset(dev);
      manifest.input("dev", dev);
      const auto df = load_features(dev_args, cfg, manifest);
      dev_in = build_inputs(dev_data, *df, cfg);
    }
    manifest.param("selection", dev.empty() ? "train" : "dev");

    fs::create_directories(out);
    const fs::path curve_path = fs::path(out) / "training_curve.csv";
    auto curve = open_out(curve_path);
    curve << "epoch,train_loss,dev_P,dev_R,dev_F1,dev_Acc\n";
    const auto result = train(train_in, dev_in, cfg, [&](const EpochRecord& r) {
      if (!std::isfinite(r.train_loss)) fail(ErrorKind::kNumeric, "training loss diverged at epoch ", r.epoch);
      curve << r.epoch << ',' << format_fixed(r.train_loss) << ',' << format_fixed(r.dev.precision) << ','
            << format_fixed(r.dev.recall) << ',' << format_fixed(r.dev.f1) << ',' << format_fixed(r.dev.accuracy)
            << '\n';
      std::cerr << "epoch " << r.epoch << " loss " << format_fixed(r.train_loss) << " dev F1 "
                << format_fixed(r.dev.f1) << '\n';
    });
    curve.close();
    const fs::path ckpt = fs::path(out) / "checkpoint.mseq";
    save_checkpoint(result.best, ckpt.string());
    std::cerr << "best epoch " << result.best.epoch << " dev F1 " << format_fixed(result.best.dev_f1) << '\n';
    manifest.output(ckpt);
    manifest.output(curve_path);
    manifest.write(out);
  }
};

struct EvalCmd {
  std::string checkpoint, data, out = "eval", mode, split = "test";
  FeatureArgs features;

  void add(CLI::App& root) {
    auto* app = root.add_subcommand("eval", "score a checkpoint on a labelled dataset");
    app->add_option("--checkpoint", checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
    app->add_option("--data", data, "dataset TSV")->required()->check(CLI::ExistingFile);
    app->add_option("--breakdown", mode, "extra rows per genre or per PoS")->check(CLI::IsMember({"genre", "pos"}));
    app->add_option("--split", split, "value written to the split column");
    app->add_option("--out", out, "output directory");
    features.add_to(app);
    app->callback([this] { run(); });
  }

  void run() {
    Manifest manifest("eval");
    const Checkpoint ckpt = load_checkpoint(checkpoint);
    manifest.input("checkpoint", checkpoint);
    manifest.config("", &ckpt.config);
    manifest.seed(ckpt.config.seed);
    manifest.param("breakdown", mode.empty() ? json(nullptr) : json(mode));
    const auto records = parse_dataset(data);
    manifest.input("data", data);
    const auto f = load_features(features, ckpt.config, manifest);
    std::vector<SentenceInput> inputs;
    for (const auto& l : f->layers) check_alignment(records, l);
    try {
      inputs = assemble_inputs(records, f->sources(), ckpt.config);
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::kDimension) fail(ErrorKind::kCompatibility, e.what());
      throw;
    }
    std::vector<ScoredToken> tokens;
    try {
      tokens = score_sentences(TaggerModel(ckpt.config, ckpt.params), inputs, &records);
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::kDimension) fail(ErrorKind::kCompatibility, e.what());
      throw;
    }
    Confusion c;
    for (const auto& t : tokens) c.add(t.predicted, t.gold);

    fs::create_directories(out);
    const fs::path report = fs::path(out) / "report.csv";
    auto csv = open_out(report);
    csv << kMetricsCsvHeader << '\n';
    write_metrics_row(csv, split, "overall", MetricsReport::from_counts(c));
    write_breakdown(csv, split, tokens, mode);
    csv.close();
    manifest.output(report);
    manifest.write(out);
  }
};

struct CrossvalCmd {
  std::string data, out = "crossval", mode;
  std::size_t folds = 10, threads = 1;
  std::optional<std::uint64_t> fold_seed;
  bool stratify = false;
  FeatureArgs features;
  ConfigArgs config;

  void add(CLI::App& root) {
    auto* app = root.add_subcommand("crossval", "k-fold cross-validation with pooled counts");
    app->add_option("--data", data, "dataset TSV")->required()->check(CLI::ExistingFile);
    app->add_option("--folds", folds, "number of folds")->check(CLI::Range(2, 1000));
    app->add_option("--fold-seed", fold_seed, "seed of the fold assignment (default: run seed)");
    app->add_flag("--stratify", stratify, "balance sentences with metaphors across folds");
    app->add_option("--breakdown", mode, "extra pooled rows per genre or per PoS")
        ->check(CLI::IsMember({"genre", "pos"}));
    app->add_option("--threads", threads, "worker cap")->check(CLI::PositiveNumber);
    app->add_option("--out", out, "output directory");
    features.add_to(app);
    config.add_to(app);
    app->callback([this] { run(); });
  }

  void run() {
    const ModelConfig cfg = config.resolve();
    Manifest manifest("crossval");
    manifest.config(config.path, &cfg);
    manifest.seed(cfg.seed);
    const std::uint64_t fseed = fold_seed.value_or(cfg.seed);
    manifest.param("folds", folds);
    manifest.param("fold_seed", fseed);
    manifest.param("stratify", stratify);
    manifest.param("breakdown", mode.empty() ? json(nullptr) : json(mode));
    const auto records = parse_dataset(data);
    manifest.input("data", data);
    const auto f = load_features(features, cfg, manifest);
    const auto inputs = build_inputs(records, *f, cfg);
    const auto cv = cross_validate(records, inputs, cfg, folds, fseed, threads, stratify);

    fs::create_directories(out);
    const fs::path report = fs::path(out) / "crossval_report.csv";
    auto csv = open_out(report);
    csv << kMetricsCsvHeader << '\n';
    for (const auto& fr : cv.folds) {
      write_metrics_row(csv, "fold" + std::to_string(fr.fold), "overall", MetricsReport::from_counts(fr.counts));
    }
    write_metrics_row(csv, "pooled", "overall", cv.report);
    write_breakdown(csv, "pooled", cv.pooled_tokens(), mode);
    csv.close();
    manifest.output(report);
    manifest.write(out);
  }
};

struct ProbeCmd {
  std::string data, out = "probe", mode = "cosine", reference;
  std::vector<std::string> layer_files;
  std::vector<double> f1;
  std::optional<std::uint64_t> seed;
  std::size_t threads = 1;
  bool unrotated = false;
  bool targets_only = false;

  void add(CLI::App& root) {
    auto* app = root.add_subcommand("probe", "layer-wise analyses of contextual embeddings");
    app->add_option("--data", data, "dataset TSV the layer files are aligned to")->required()->check(CLI::ExistingFile);
    app->add_option("--layer-files", layer_files, "contextual layer files")->required()->check(CLI::ExistingFile);
    app->add_option("--mode", mode, "cosine | l2 | pca")->check(CLI::IsMember({"cosine", "l2", "pca"}));
    app->add_option("--reference", reference, "l2: the file every layer is aligned to")->check(CLI::ExistingFile);
    app->add_option("--f1", f1, "l2: downstream F1 per layer file, same order");
    app->add_flag("--unrotated", unrotated, "l2: skip the orthogonal alignment");
    app->add_flag("--targets-only", targets_only, "l2/pca: use target tokens only");
    app->add_option("--seed", seed, "pair sampling seed (default: METASEQ_SEED or 42)");
    app->add_option("--threads", threads, "worker cap")->check(CLI::PositiveNumber);
    app->add_option("--out", out, "output directory");
    app->callback([this] { run(); });
  }

  template <typename Fn>
  void for_each_layer(std::size_t n, Fn&& fn) const {
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex m;
    auto worker = [&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(m);
          if (!error) error = std::current_exception();
        }
      }
    };
    std::vector<std::thread> pool;
    for (std::size_t w = 1; w < std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(n, 1)); ++w)
      pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
  }

  void run() {
    const std::uint64_t s = seed.value_or(default_seed());
    Manifest manifest("probe");
    manifest.config("", nullptr);
    manifest.seed(s);
    manifest.param("mode", mode);
    const auto records = parse_dataset(data);
    manifest.input("data", data);
    std::vector<ContextualLayerFile> layers;
    for (const auto& p : layer_files) {
      layers.push_back(load_contextual(p));
      manifest.input("layer", p);
    }
    fs::create_directories(out);
    std::vector<std::size_t> order(layers.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return layers[a].layer_index() < layers[b].layer_index(); });
    const auto keep = [this](const SentenceRecord&, const TokenRecord& t) { return !targets_only || t.target; };

    if (mode == "cosine") {
      for (const auto& l : layers) check_alignment(records, l);
      const auto pairs = build_pairs(records, s);
      std::vector<double> avg(layers.size());
      for_each_layer(layers.size(), [&](std::size_t i) { avg[i] = avg_pair_cosine(pairs, layers[i]); });
      const fs::path p = fs::path(out) / "probe_cosine.csv";
      auto csv = open_out(p);
      csv << "layer,avg_cosine,n_pairs\n";
      for (auto i : order) csv << layers[i].layer_index() << ',' << format_fixed(avg[i]) << ',' << pairs.size() << '\n';
      manifest.output(p);
    } else if (mode == "l2") {
      if (reference.empty()) fail(ErrorKind::kUsage, "probe --mode l2 needs --reference");
      if (!f1.empty() && f1.size() != layers.size()) {
        fail(ErrorKind::kUsage, "--f1 has ", f1.size(), " values for ", layers.size(), " layer files");
      }
      const auto ref = load_contextual(reference);
      manifest.input("reference", reference);
      manifest.param("rotated", !unrotated);
      const Matrix e = gather_tokens(records, ref, keep);
      std::vector<double> dist(layers.size());
      for_each_layer(layers.size(), [&](std::size_t i) {
        const Matrix b = gather_tokens(records, layers[i], keep);
        dist[i] = unrotated ? avg_l2(e, b) : procrustes_align(b, e).average_l2;
      });
      std::string r_field;
      if (!f1.empty() && layers.size() >= 2) r_field = format_fixed(pearson_r(dist, f1));
      const fs::path p = fs::path(out) / "probe_l2.csv";
      auto csv = open_out(p);
      csv << "layer,avg_l2,pearson_vs_f1\n";
      for (auto i : order) csv << layers[i].layer_index() << ',' << format_fixed(dist[i]) << ',' << r_field << '\n';
      manifest.output(p);
    } else {
      if (layers.size() != 1) fail(ErrorKind::kUsage, "probe --mode pca takes exactly one layer file");
      std::vector<TokenLocator> locs;
      const Matrix x = gather_tokens(records, layers[0], keep, &locs);
      const auto proj = pca_2d(x);
      const fs::path p = fs::path(out) / "probe_pca.csv";
      auto csv = open_out(p);
      csv << "token,pos,x,y\n";
      for (std::size_t r = 0; r < locs.size(); ++r) {
        const auto& t = records[locs[r].sentence].tokens[locs[r].token];
        const auto row = static_cast<Eigen::Index>(r);
        csv << t.text << ',' << t.pos << ',' << format_fixed(proj.points(row, 0)) << ','
            << format_fixed(proj.points(row, 1)) << '\n';
      }
      csv.close();
      const fs::path ev = fs::path(out) / "probe_pca_explained.csv";
      auto evcsv = open_out(ev);
      evcsv << "component,explained_ratio\n1," << format_fixed(proj.explained_ratio[0]) << "\n2,"
            << format_fixed(proj.explained_ratio[1]) << '\n';
      manifest.output(p);
      manifest.output(ev);
    }
    manifest.write(out);
  }
};

struct SynthCmd {
  std::string out = "synth";
  SyntheticSpec spec;
  std::optional<std::uint64_t> seed;

  void add(CLI::App& root) {
    auto* app = root.add_subcommand("synth", "write a seeded synthetic corpus");
    app->add_option("--out", out, "output directory");
    app->add_option("--sentences", spec.sentences, "sentence count");
    app->add_option("--dim", spec.dim, "contextual dimension");
    app->add_option("--static-dim", spec.static_dim, "static vector dimension");
    app->add_option("--vocabulary", spec.vocabulary, "distinct words");
    app->add_option("--metaphor-rate", spec.metaphor_rate, "share of metaphoric tokens")->check(CLI::Range(0.0, 1.0));
    app->add_option("--noise", spec.noise, "noise std-dev");
    app->add_option("--seed", seed, "corpus seed (default: METASEQ_SEED or 7)");
    app->callback([this] { run(); });
  }

  void run() {
    if (spec.min_length > spec.max_length || spec.vocabulary == 0) fail(ErrorKind::kUsage, "bad synthetic spec");
    if (seed) spec.seed = *seed;
    else if (std::getenv("METASEQ_SEED")) spec.seed = default_seed();
    const auto corpus = make_synthetic(spec);
    Manifest manifest("synth");
    manifest.config("", nullptr);
    manifest.seed(spec.seed);
    manifest.param("sentences", spec.sentences);
    manifest.param("dim", spec.dim);
    manifest.param("static_dim", spec.static_dim);
    manifest.param("vocabulary", spec.vocabulary);
    manifest.param("metaphor_rate", spec.metaphor_rate);
    manifest.param("noise", spec.noise);
    fs::create_directories(out);
    const fs::path ds = fs::path(out) / "dataset.tsv", gl = fs::path(out) / "glove.txt";
    const fs::path el = fs::path(out) / "layer_elmo.cemb", bl = fs::path(out) / "layer_bert.cemb";
    {
      auto o = open_out(ds);
      o << "sentence_id\tgenre\ttoken_index\ttoken\tpos\tlabel\ttarget\n";
      write_dataset(o, corpus.sentences);
    }
    {
      auto o = open_out(gl);
      write_static_text(o, corpus.glove);
    }
    write_contextual(el.string(), corpus.elmo);
    write_contextual(bl.string(), corpus.bert);
    for (const auto& p : {ds, gl, el, bl}) manifest.output(p);
    manifest.write(out);
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"metaseq: sequential metaphor identification toolkit"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);
  TrainCmd train_cmd;
  EvalCmd eval_cmd;
  ProbeCmd probe_cmd;
  CrossvalCmd crossval_cmd;
  SynthCmd synth_cmd;
  train_cmd.add(app);
  eval_cmd.add(app);
  probe_cmd.add(app);
  crossval_cmd.add(app);
  synth_cmd.add(app);
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  } catch (const Error& e) {
    std::cerr << "metaseq: " << e.what() << '\n';
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "metaseq: " << e.what() << '\n';
    return kExitData;
  }
  return kExitOk;
}
