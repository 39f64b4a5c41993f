// SPDX-License-Identifier: Apache-2.0
#pragma once

// Multi-channel CNN + BiLSTM token tagger.
//
//   static rows --linear--> G ┐
//   contextual layer -----> E ├─ stack (c×n×d) ─ dropout ─ conv per window
//   contextual layer -----> B ┘      ─ concat (n×kW) ─ tanh ─ BiLSTM (n×2H)
//                                    ─ dropout ─ affine ─ softmax (n×2)
//
// Trained one sentence at a time with plain SGD on the class-weighted
// cross-entropy.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "metaseq/dataset.hpp"
#include "metaseq/embedding_io.hpp"
#include "metaseq/error.hpp"
#include "metaseq/linguistic_features.hpp"
#include "metaseq/metrics.hpp"
#include "metaseq/ops.hpp"
#include "metaseq/tensor.hpp"

namespace metaseq {

namespace detail {

inline std::string shortest(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    auto comma = s.find(',', pos);
    if (comma == std::string_view::npos) comma = s.size();
    auto item = trim(s.substr(pos, comma - pos));
    if (!item.empty()) out.push_back(std::move(item));
    pos = comma + 1;
  }
  return out;
}

template <typename T>
T parse_number(std::string_view key, std::string_view text) {
  T value{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    fail(ErrorKind::kParse, "config key '", key, "': cannot parse '", text, "'");
  }
  return value;
}

inline bool parse_bool(std::string_view key, std::string_view text) {
  if (text == "1" || text == "true" || text == "yes") return true;
  if (text == "0" || text == "false" || text == "no") return false;
  fail(ErrorKind::kParse, "config key '", key, "': expected a boolean, got '", text, "'");
}

}  // namespace detail

struct ModelConfig {
  std::size_t dim = 1024;
  std::vector<std::size_t> windows{2, 3, 4, 5};
  std::size_t kernels = 100;
  std::size_t hidden = 256;
  double input_dropout = 0.5;
  double hidden_dropout = 0.1;
  double learning_rate = 0.2;
  double weight_metaphor = 2.0;
  double weight_literal = 1.0;
  std::vector<Channel> channels{Channel::kGlove, Channel::kElmo, Channel::kBert};
  std::size_t epochs = 30;
  std::uint64_t seed = 42;
  std::size_t static_dim = 300;
  bool use_pos = false;
  bool use_abst = false;
  bool lowercase_lookup = true;
  std::vector<std::string> pos_tags = PosVocabulary::universal().tags();
  std::string pos_unk = "X";

  bool has_channel(Channel c) const { return std::find(channels.begin(), channels.end(), c) != channels.end(); }

  std::size_t contextual_channels() const {
    return static_cast<std::size_t>(std::count_if(channels.begin(), channels.end(),
                                                  [](Channel c) { return c != Channel::kGlove; }));
  }

  PosVocabulary pos_vocabulary() const { return PosVocabulary(pos_tags, pos_unk); }

  /// Width of the static row fed to the projection: vector ⊕ PoS ⊕ abstractness.
  std::size_t static_input_width() const {
    return static_dim + (use_pos ? pos_vocabulary().size() : 0) + (use_abst ? 1 : 0);
  }

  std::size_t feature_width() const { return kernels * windows.size(); }

  void validate() const {
    auto positive = [](std::size_t v, std::string_view name) {
      if (v == 0) fail(ErrorKind::kParameter, "config: ", name, " must be positive");
    };
    positive(dim, "dim");
    positive(kernels, "kernels");
    positive(hidden, "hidden");
    if (windows.empty()) fail(ErrorKind::kParameter, "config: at least one window size is required");
    for (auto w : windows) positive(w, "window size");
    if (has_channel(Channel::kGlove)) positive(static_dim, "static_dim");
    for (double r : {input_dropout, hidden_dropout}) {
      if (!(r >= 0.0 && r < 1.0)) fail(ErrorKind::kParameter, "config: dropout ", r, " outside [0,1)");
    }
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
      fail(ErrorKind::kParameter, "config: learning_rate must be finite and non-negative");
    }
    if (!(weight_metaphor > 0.0) || !(weight_literal > 0.0)) {
      fail(ErrorKind::kParameter, "config: class weights must be positive");
    }
    if (channels.empty()) fail(ErrorKind::kParameter, "config: no channels");
    if ((use_pos || use_abst) && !has_channel(Channel::kGlove)) {
      fail(ErrorKind::kParameter, "config: linguistic features ride on the G channel, which is disabled");
    }
  }

  /// Applies one `key = value` setting.
  void set(std::string_view key, std::string_view value) {
    const std::string v = detail::trim(value);
    if (key == "dim") dim = detail::parse_number<std::size_t>(key, v);
    else if (key == "windows") {
      windows.clear();
      for (const auto& item : detail::split_list(v)) windows.push_back(detail::parse_number<std::size_t>(key, item));
    } else if (key == "kernels") kernels = detail::parse_number<std::size_t>(key, v);
    else if (key == "hidden") hidden = detail::parse_number<std::size_t>(key, v);
    else if (key == "input_dropout") input_dropout = detail::parse_number<double>(key, v);
    else if (key == "hidden_dropout") hidden_dropout = detail::parse_number<double>(key, v);
    else if (key == "learning_rate") learning_rate = detail::parse_number<double>(key, v);
    else if (key == "weight_metaphor") weight_metaphor = detail::parse_number<double>(key, v);
    else if (key == "weight_literal") weight_literal = detail::parse_number<double>(key, v);
    else if (key == "channels") channels = parse_channels(v);
    else if (key == "epochs") epochs = detail::parse_number<std::size_t>(key, v);
    else if (key == "seed") seed = detail::parse_number<std::uint64_t>(key, v);
    else if (key == "static_dim") static_dim = detail::parse_number<std::size_t>(key, v);
    else if (key == "use_pos") use_pos = detail::parse_bool(key, v);
    else if (key == "use_abst") use_abst = detail::parse_bool(key, v);
    else if (key == "lowercase_lookup") lowercase_lookup = detail::parse_bool(key, v);
    else if (key == "pos_tags") pos_tags = detail::split_list(v);
    else if (key == "pos_unk") pos_unk = v;
    else fail(ErrorKind::kParse, "unknown config key '", key, "'");
  }

  /// Reads `key = value` lines; blank lines and '#' comments are skipped.
  void apply_text(std::string_view text, std::string_view source = "<config>") {
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const auto t = detail::trim(line);
      if (t.empty() || t.front() == '#') continue;
      const auto eq = t.find('=');
      if (eq == std::string::npos) fail(ErrorKind::kParse, source, ":", line_no, ": expected key = value");
      try {
        set(detail::trim(std::string_view(t).substr(0, eq)), std::string_view(t).substr(eq + 1));
      } catch (const Error& e) {
        fail(e.kind(), source, ":", line_no, ": ", e.what());
      }
    }
  }

  static ModelConfig from_text(std::string_view text, std::string_view source = "<config>") {
    ModelConfig c;
    c.apply_text(text, source);
    return c;
  }

  /// Canonical text form; fixed key order, shortest round-trip doubles.
  std::string to_text() const {
    std::ostringstream os;
    auto join = [](const auto& items) {
      std::string s;
      for (std::size_t i = 0; i < items.size(); ++i) {
        if (i) s += ",";
        if constexpr (std::is_same_v<std::decay_t<decltype(items[i])>, std::string>) s += items[i];
        else s += std::to_string(items[i]);
      }
      return s;
    };
    os << "dim=" << dim << '\n'
       << "windows=" << join(windows) << '\n'
       << "kernels=" << kernels << '\n'
       << "hidden=" << hidden << '\n'
       << "input_dropout=" << detail::shortest(input_dropout) << '\n'
       << "hidden_dropout=" << detail::shortest(hidden_dropout) << '\n'
       << "learning_rate=" << detail::shortest(learning_rate) << '\n'
       << "weight_metaphor=" << detail::shortest(weight_metaphor) << '\n'
       << "weight_literal=" << detail::shortest(weight_literal) << '\n'
       << "channels=" << channels_string(channels) << '\n'
       << "epochs=" << epochs << '\n'
       << "seed=" << seed << '\n'
       << "static_dim=" << static_dim << '\n'
       << "use_pos=" << (use_pos ? 1 : 0) << '\n'
       << "use_abst=" << (use_abst ? 1 : 0) << '\n'
       << "lowercase_lookup=" << (lowercase_lookup ? 1 : 0) << '\n'
       << "pos_tags=" << join(pos_tags) << '\n'
       << "pos_unk=" << pos_unk << '\n';
    return os.str();
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// One sentence ready for the network.
struct SentenceInput {
  std::string sentence_id;
  Tensor static_rows;               // n × static_input_width, when the G channel is on
  std::vector<Tensor> contextual;   // n × dim per contextual channel, in channel order
  std::vector<int> labels;          // training labels; non-targets are literal
  std::vector<int> gold;            // labels as annotated
  std::vector<std::uint8_t> targets;  // evaluation mask

  std::size_t length() const noexcept { return labels.size(); }
};

/// Lookups needed to turn SentenceRecords into SentenceInputs.
struct FeatureSources {
  const StaticEmbeddingTable* glove = nullptr;
  const AbstractnessScorer* abstractness = nullptr;
  /// One file per contextual channel, in channel order (E before B).
  std::vector<const ContextualLayerFile*> layers;
};

/// Builds the network input for sentence `ordinal` of a dataset. Contextual
/// files are indexed by the sentence's 0-based position in the dataset file.
inline SentenceInput assemble_input(const SentenceRecord& sentence, std::uint32_t ordinal,
                                    const FeatureSources& sources, const ModelConfig& config) {
  const std::size_t n = sentence.tokens.size();
  if (n == 0) fail(ErrorKind::kInput, "sentence ", sentence.id, " is empty");
  SentenceInput in;
  in.sentence_id = sentence.id;
  for (const auto& t : sentence.tokens) {
    in.gold.push_back(t.label);
    in.labels.push_back(t.target ? t.label : kLiteral);
    in.targets.push_back(t.target ? 1 : 0);
  }
  if (config.has_channel(Channel::kGlove)) {
    if (!sources.glove) fail(ErrorKind::kInput, "the G channel needs static embeddings");
    if (sources.glove->dimension() != config.static_dim) {
      fail(ErrorKind::kCompatibility, "static embeddings have dimension ", sources.glove->dimension(),
           ", model expects ", config.static_dim);
    }
    if (config.use_abst && !sources.abstractness) fail(ErrorKind::kInput, "use_abst needs an abstractness lexicon");
    const PosVocabulary vocab = config.pos_vocabulary();
    std::vector<double> rows;
    rows.reserve(n * config.static_input_width());
    for (const auto& t : sentence.tokens) {
      const auto vec = sources.glove->contains(t.text) || !config.lowercase_lookup
                           ? sources.glove->lookup(t.text)
                           : sources.glove->lookup(to_lower_ascii(t.text));
      rows.insert(rows.end(), vec.begin(), vec.end());
      if (config.use_pos) {
        const auto hot = pos_one_hot(t.pos, vocab);
        rows.insert(rows.end(), hot.begin(), hot.end());
      }
      if (config.use_abst) rows.push_back(sources.abstractness->score(t.text));
    }
    in.static_rows = Tensor::matrix(n, config.static_input_width(), std::move(rows));
  }
  if (sources.layers.size() != config.contextual_channels()) {
    fail(ErrorKind::kInput, config.contextual_channels(), " contextual layer files needed, ", sources.layers.size(),
         " given");
  }
  for (const ContextualLayerFile* layer : sources.layers) {
    if (layer->dimension() != config.dim) {
      fail(ErrorKind::kCompatibility, "layer ", layer->layer_index(), " has dimension ", layer->dimension(),
           ", model expects ", config.dim);
    }
    const ContextualSentence* s = layer->find(ordinal);
    if (!s) {
      fail(ErrorKind::kAlignment, "sentence ", sentence.id, " (index ", ordinal, ") missing from layer ",
           layer->layer_index());
    }
    if (s->token_count != n) {
      fail(ErrorKind::kAlignment, "sentence ", sentence.id, " (index ", ordinal, ") has ", n, " tokens but layer ",
           layer->layer_index(), " holds ", s->token_count);
    }
    in.contextual.push_back(layer->matrix(ordinal));
  }
  return in;
}

inline std::vector<SentenceInput> assemble_inputs(const std::vector<SentenceRecord>& sentences,
                                                  const FeatureSources& sources, const ModelConfig& config) {
  std::vector<SentenceInput> out;
  out.reserve(sentences.size());
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    out.push_back(assemble_input(sentences[i], static_cast<std::uint32_t>(i), sources, config));
  }
  return out;
}

class TaggerModel {
 public:
  struct Trace {
    ChannelStack stack;
    Tensor features;  // n × (kernels·windows), before tanh
    Tensor hidden;    // n × 2H
    Tensor probs;     // n × 2
  };

  /// Fresh model with parameters drawn from `config.seed`.
  explicit TaggerModel(ModelConfig config) : config_(std::move(config)) {
    config_.validate();
    RngStream rng(config_.seed, 0x696e6974ULL);
    for (const auto& [name, shape] : parameter_shapes()) {
      params_.add(name, initial_value(name, shape, rng));
    }
  }

  /// Model around existing parameters; names and shapes must match the config.
  TaggerModel(ModelConfig config, ParameterSet params) : config_(std::move(config)), params_(std::move(params)) {
    config_.validate();
    const auto expected = parameter_shapes();
    if (expected.size() != params_.size()) {
      fail(ErrorKind::kFormat, "expected ", expected.size(), " parameters, found ", params_.size());
    }
    std::size_t i = 0;
    for (const auto& [name, tensor] : params_) {
      if (expected[i].first != name || expected[i].second != tensor.shape()) {
        fail(ErrorKind::kFormat, "parameter ", i, " is '", name, "' ", shape_string(tensor.shape()), ", expected '",
             expected[i].first, "' ", shape_string(expected[i].second));
      }
      ++i;
    }
  }

  const ModelConfig& config() const noexcept { return config_; }
  ParameterSet& parameters() noexcept { return params_; }
  const ParameterSet& parameters() const noexcept { return params_; }

  /// Parameter names and shapes in canonical order.
  std::vector<std::pair<std::string, Shape>> parameter_shapes() const {
    std::vector<std::pair<std::string, Shape>> out;
    const std::size_t d = config_.dim, h = config_.hidden;
    if (config_.has_channel(Channel::kGlove)) {
      out.push_back({"proj.weight", {d, config_.static_input_width()}});
      out.push_back({"proj.bias", {d}});
    }
    for (auto w : config_.windows) {
      out.push_back({"conv.w" + std::to_string(w), {config_.kernels, config_.channels.size(), w, d}});
    }
    for (std::string dir : {"fwd", "bwd"}) {
      out.push_back({"lstm." + dir + ".wx", {config_.feature_width(), 4 * h}});
      out.push_back({"lstm." + dir + ".wh", {h, 4 * h}});
      out.push_back({"lstm." + dir + ".b", {4 * h}});
    }
    out.push_back({"out.weight", {2 * h, 2}});
    out.push_back({"out.bias", {2}});
    return out;
  }

  Trace forward(Tape& tape, const SentenceInput& in, RngStream& rng, bool training) const {
    check_input(in);
    std::vector<Tensor> mats;
    std::size_t ctx = 0;
    for (Channel c : config_.channels) {
      if (c == Channel::kGlove) {
        mats.push_back(project_static(tape, in.static_rows, params_.get("proj.weight"), params_.get("proj.bias")));
      } else {
        mats.push_back(in.contextual[ctx++]);
      }
    }
    Trace trace;
    trace.stack = stack_channels(tape, mats, config_.channels);
    const Tensor x = dropout(tape, trace.stack.values, config_.input_dropout, rng, training);
    std::vector<Tensor> maps;
    for (auto w : config_.windows) maps.push_back(conv_seq(tape, x, params_.get("conv.w" + std::to_string(w))));
    trace.features = concat_cols(tape, maps);
    const Tensor activated = tanh_act(tape, trace.features);
    trace.hidden = concat_cols(tape, {lstm_direction(tape, activated, "fwd", false),
                                      lstm_direction(tape, activated, "bwd", true)});
    const Tensor h = dropout(tape, trace.hidden, config_.hidden_dropout, rng, training);
    const Tensor logits = add_row_bias(tape, matmul(tape, h, params_.get("out.weight")), params_.get("out.bias"));
    trace.probs = softmax(tape, logits);
    return trace;
  }

  /// Class-weighted cross-entropy over every token (literal = class 0).
  Tensor loss(Tape& tape, const Trace& trace, const SentenceInput& in) const {
    const std::vector<double> weights{config_.weight_literal, config_.weight_metaphor};
    const std::vector<std::uint8_t> all(in.length(), 1);
    return weighted_cross_entropy(tape, trace.probs, in.labels, weights, all);
  }

  /// Inference-mode metaphor probabilities, one per token.
  std::vector<double> metaphor_probabilities(const SentenceInput& in) const {
    Tape tape(Tape::Mode::kInference);
    RngStream unused(0, 0);
    const Trace t = forward(tape, in, unused, false);
    std::vector<double> p(in.length());
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = t.probs.at(i, kMetaphor);
    return p;
  }

 private:
  void check_input(const SentenceInput& in) const {
    const std::size_t n = in.length();
    if (n == 0) fail(ErrorKind::kInput, "empty sentence");
    if (in.contextual.size() != config_.contextual_channels()) {
      fail(ErrorKind::kDimension, "sentence ", in.sentence_id, ": ", in.contextual.size(),
           " contextual matrices for ", config_.contextual_channels(), " channels");
    }
    for (const auto& m : in.contextual) {
      if (m.rank() != 2 || m.dim(0) != n || m.dim(1) != config_.dim) {
        fail(ErrorKind::kDimension, "sentence ", in.sentence_id, ": contextual matrix ", shape_string(m.shape()),
             ", expected (", n, ",", config_.dim, ")");
      }
    }
    if (config_.has_channel(Channel::kGlove)) {
      if (!in.static_rows.defined() || in.static_rows.rank() != 2 || in.static_rows.dim(0) != n ||
          in.static_rows.dim(1) != config_.static_input_width()) {
        fail(ErrorKind::kDimension, "sentence ", in.sentence_id, ": static rows ",
             in.static_rows.defined() ? shape_string(in.static_rows.shape()) : std::string("missing"), ", expected (",
             n, ",", config_.static_input_width(), ")");
      }
    }
  }

  Tensor lstm_direction(Tape& tape, const Tensor& x, const std::string& dir, bool reverse) const {
    const std::size_t n = x.dim(0), h = config_.hidden;
    const Tensor& wx = params_.get("lstm." + dir + ".wx");
    const Tensor& wh = params_.get("lstm." + dir + ".wh");
    const Tensor& b = params_.get("lstm." + dir + ".b");
    const Tensor projected = matmul(tape, x, wx);  // n × 4H, all steps at once
    Tensor hidden = Tensor::zeros({1, h});
    Tensor cell = Tensor::zeros({1, h});
    std::vector<Tensor> outputs(n);
    for (std::size_t step = 0; step < n; ++step) {
      const std::size_t t = reverse ? n - 1 - step : step;
      Tensor z = add(tape, slice_rows(tape, projected, t, 1), matmul(tape, hidden, wh));
      z = add_row_bias(tape, z, b);
      const Tensor in_gate = sigmoid(tape, slice_cols(tape, z, 0, h));
      const Tensor forget_gate = sigmoid(tape, slice_cols(tape, z, h, h));
      const Tensor candidate = tanh_act(tape, slice_cols(tape, z, 2 * h, h));
      const Tensor out_gate = sigmoid(tape, slice_cols(tape, z, 3 * h, h));
      cell = add(tape, mul(tape, forget_gate, cell), mul(tape, in_gate, candidate));
      hidden = mul(tape, out_gate, tanh_act(tape, cell));
      outputs[t] = hidden;
    }
    return concat_rows(tape, outputs);
  }

  Tensor initial_value(const std::string& name, const Shape& shape, RngStream& rng) const {
    const bool is_bias = name.ends_with(".bias") || name.ends_with(".b");
    if (is_bias) {
      std::vector<double> v(shape_size(shape), 0.0);
      if (name.starts_with("lstm.")) {
        const std::size_t h = config_.hidden;
        for (std::size_t i = h; i < 2 * h; ++i) v[i] = 1.0;  // forget gate
      }
      return Tensor::from(shape, std::move(v));
    }
    double fan_in = 0.0, fan_out = 0.0;
    if (shape.size() == 4) {  // conv bank: kernels × channels × window × dim
      fan_in = static_cast<double>(shape[1] * shape[2] * shape[3]);
      fan_out = static_cast<double>(shape[0]);
    } else if (name == "proj.weight") {  // stored out × in
      fan_in = static_cast<double>(shape[1]);
      fan_out = static_cast<double>(shape[0]);
    } else {  // in × out
      fan_in = static_cast<double>(shape[0]);
      fan_out = static_cast<double>(shape[1]);
    }
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    std::vector<double> v(shape_size(shape));
    for (auto& x : v) x = rng.uniform(-limit, limit);
    return Tensor::from(shape, std::move(v));
  }

  ModelConfig config_;
  ParameterSet params_;
};

// ---------------------------------------------------------------------------
// Checkpoints ("MSEQ")
//
//   magic "MSEQ" | u32 version | u32 config length | config text (UTF-8) |
//   per parameter: u32 name length, name, u32 rank, u32 dims..., f64 payload
// ---------------------------------------------------------------------------

inline constexpr char kCheckpointMagic[4] = {'M', 'S', 'E', 'Q'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig config;
  ParameterSet params;
  std::size_t epoch = 0;
  double dev_f1 = 0.0;
};

inline std::string encode_checkpoint(const Checkpoint& ckpt) {
  std::string out(kCheckpointMagic, 4);
  detail::put_u32(out, kCheckpointVersion);
  const std::string text = ckpt.config.to_text() + "checkpoint_epoch=" + std::to_string(ckpt.epoch) +
                           "\ncheckpoint_dev_f1=" + detail::shortest(ckpt.dev_f1) + "\n";
  detail::put_u32(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  for (const auto& [name, t] : ckpt.params) {
    detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    detail::put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) detail::put_u32(out, static_cast<std::uint32_t>(d));
    for (double v : t.data()) detail::put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

inline Checkpoint decode_checkpoint(std::string_view bytes, std::string source = "<buffer>") {
  detail::ByteReader in(bytes, std::move(source));
  if (in.remaining() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    fail(ErrorKind::kFormat, in.source(), ": bad magic, expected MSEQ");
  }
  in.bytes(4, "magic");
  const std::uint32_t version = in.u32("version");
  if (version != kCheckpointVersion) fail(ErrorKind::kFormat, in.source(), ": unsupported checkpoint version ", version);
  const std::uint32_t text_len = in.u32("config length");
  const std::string text(in.bytes(text_len, "config text"));

  Checkpoint ckpt;
  std::string config_text;
  std::istringstream lines(text);
  std::string line;
  while (std::getline(lines, line)) {
    if (line.starts_with("checkpoint_epoch=")) {
      ckpt.epoch = detail::parse_number<std::size_t>("checkpoint_epoch", line.substr(17));
    } else if (line.starts_with("checkpoint_dev_f1=")) {
      ckpt.dev_f1 = detail::parse_number<double>("checkpoint_dev_f1", line.substr(18));
    } else {
      config_text += line + "\n";
    }
  }
  try {
    ckpt.config = ModelConfig::from_text(config_text, in.source());
  } catch (const Error& e) {
    fail(ErrorKind::kFormat, e.what());
  }

  ParameterSet params;
  while (in.remaining() > 0) {
    const std::uint32_t name_len = in.u32("parameter name length");
    const std::string name(in.bytes(name_len, "parameter name"));
    const std::uint32_t rank = in.u32("parameter rank");
    if (rank == 0 || rank > 8) fail(ErrorKind::kFormat, in.source(), ": parameter '", name, "' has rank ", rank);
    Shape shape(rank);
    for (auto& d : shape) {
      d = in.u32("parameter dims");
      if (d == 0) fail(ErrorKind::kFormat, in.source(), ": parameter '", name, "' has a zero extent");
    }
    const std::size_t count = shape_size(shape);
    if (in.remaining() / 8 < count) fail(ErrorKind::kIo, in.source(), ": truncated payload for '", name, "'");
    std::vector<double> data(count);
    for (auto& v : data) {
      v = std::bit_cast<double>(in.u64("parameter payload"));
      if (!std::isfinite(v)) fail(ErrorKind::kFormat, in.source(), ": non-finite value in '", name, "'");
    }
    params.add(name, Tensor::from(std::move(shape), std::move(data)));
  }
  TaggerModel validate(ckpt.config, params);  // names and shapes against the config
  ckpt.params = std::move(params);
  return ckpt;
}

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  detail::write_file_bytes(path, encode_checkpoint(ckpt));
}

/// Loads a checkpoint; when `expected_dim` is given it must match the stored config.
inline Checkpoint load_checkpoint(const std::string& path, std::optional<std::size_t> expected_dim = std::nullopt) {
  Checkpoint ckpt = decode_checkpoint(detail::read_file_bytes(path), path);
  if (expected_dim && *expected_dim != ckpt.config.dim) {
    fail(ErrorKind::kCompatibility, path, ": checkpoint dimension ", ckpt.config.dim, ", expected ", *expected_dim);
  }
  return ckpt;
}

// ---------------------------------------------------------------------------
// Prediction, evaluation, training
// ---------------------------------------------------------------------------

struct TokenPrediction {
  int label = kLiteral;
  double p_metaphor = 0.0;
};

inline std::vector<TokenPrediction> predict(const TaggerModel& model, const SentenceInput& in) {
  const auto p = model.metaphor_probabilities(in);
  std::vector<TokenPrediction> out(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    out[i].p_metaphor = p[i];
    out[i].label = p[i] > 1.0 - p[i] ? kMetaphor : kLiteral;  // argmax, ties to literal
  }
  return out;
}

inline std::vector<TokenPrediction> predict(const Checkpoint& ckpt, const SentenceInput& in) {
  try {
    return predict(TaggerModel(ckpt.config, ckpt.params), in);
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kDimension) fail(ErrorKind::kCompatibility, e.what());
    throw;
  }
}

/// Target tokens of every sentence with their predictions and annotations.
inline std::vector<ScoredToken> score_sentences(const TaggerModel& model, const std::vector<SentenceInput>& inputs,
                                                const std::vector<SentenceRecord>* records = nullptr) {
  std::vector<ScoredToken> out;
  for (std::size_t s = 0; s < inputs.size(); ++s) {
    const auto pred = predict(model, inputs[s]);
    for (std::size_t i = 0; i < pred.size(); ++i) {
      if (!inputs[s].targets[i]) continue;
      ScoredToken t;
      t.predicted = pred[i].label;
      t.gold = inputs[s].gold[i];
      if (records) {
        t.genre = (*records)[s].genre;
        t.pos = (*records)[s].tokens[i].pos;
      }
      out.push_back(std::move(t));
    }
  }
  return out;
}

inline MetricsReport evaluate(const TaggerModel& model, const std::vector<SentenceInput>& inputs) {
  Confusion c;
  for (const auto& t : score_sentences(model, inputs)) c.add(t.predicted, t.gold);
  return MetricsReport::from_counts(c);
}

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;  // mean per-sentence loss over the epoch
  MetricsReport dev;
};

struct TrainResult {
  Checkpoint best;
  std::vector<EpochRecord> curve;
};

/// SGD over shuffled single-sentence batches; keeps the epoch with the best
/// dev F1 (earliest on ties). With no dev inputs the training inputs are used.
inline TrainResult train(const std::vector<SentenceInput>& train_inputs, const std::vector<SentenceInput>& dev_inputs,
                         const ModelConfig& config,
                         const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  if (train_inputs.empty()) fail(ErrorKind::kInput, "training set is empty");
  for (const auto& in : train_inputs) {
    if (in.labels.size() != in.targets.size() || in.gold.size() != in.labels.size()) {
      fail(ErrorKind::kAlignment, "sentence ", in.sentence_id, ": label/target lengths differ");
    }
    for (const auto& m : in.contextual) {
      if (m.dim(0) != in.length()) {
        fail(ErrorKind::kAlignment, "sentence ", in.sentence_id, ": ", m.dim(0), " embedding rows for ",
             in.length(), " tokens");
      }
    }
    if (in.static_rows.defined() && in.static_rows.dim(0) != in.length()) {
      fail(ErrorKind::kAlignment, "sentence ", in.sentence_id, ": static rows do not match the token count");
    }
  }
  const auto& dev = dev_inputs.empty() ? train_inputs : dev_inputs;

  TaggerModel model(config);
  TrainResult result;
  result.best.config = config;
  result.best.params = model.parameters().clone();
  result.best.epoch = 0;
  result.best.dev_f1 = evaluate(model, dev).f1;

  RngStream order_rng(config.seed, 0x73687566ULL);
  RngStream dropout_rng(config.seed, 0x64726f70ULL);
  std::vector<std::size_t> order(train_inputs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  bool have_best = false;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    order_rng.shuffle(order);
    double total = 0.0;
    for (auto idx : order) {
      const auto& in = train_inputs[idx];
      Tape tape;
      model.parameters().zero_grad();
      const auto trace = model.forward(tape, in, dropout_rng, true);
      Tensor loss = model.loss(tape, trace, in);
      total += loss.item();
      backward(loss, tape);
      sgd_step(model.parameters(), config.learning_rate);
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = total / static_cast<double>(train_inputs.size());
    rec.dev = evaluate(model, dev);
    result.curve.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (!have_best || rec.dev.f1 > result.best.dev_f1) {
      have_best = true;
      result.best.params = model.parameters().clone();
      result.best.epoch = epoch;
      result.best.dev_f1 = rec.dev.f1;
    }
  }
  for (auto& [_, p] : result.best.params) p.clear_grad();
  return result;
}

}  // namespace metaseq
