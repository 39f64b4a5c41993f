// SPDX-License-Identifier: Apache-2.0
#pragma once

// Static word vectors, per-layer contextual embedding files and the channel
// stack that feeds the convolution.

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "metaseq/error.hpp"
#include "metaseq/ops.hpp"
#include "metaseq/tensor.hpp"

namespace metaseq {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

/// Token -> vector table. Absent tokens read as the zero vector.
class StaticEmbeddingTable {
 public:
  StaticEmbeddingTable() = default;
  explicit StaticEmbeddingTable(std::size_t dimension) : dimension_(dimension), zero_(dimension, 0.0) {}

  std::size_t dimension() const noexcept { return dimension_; }
  std::size_t size() const noexcept { return index_.size(); }
  bool contains(std::string_view token) const { return index_.count(std::string(token)) > 0; }

  /// Inserts a vector; returns false (and keeps the existing entry) on a duplicate token.
  bool insert(std::string token, std::span<const double> vec) {
    if (vec.size() != dimension_) {
      fail(ErrorKind::kDimension, "vector for '", token, "' has ", vec.size(), " entries, table dimension is ",
           dimension_);
    }
    if (index_.count(token)) return false;
    index_.emplace(token, tokens_.size());
    tokens_.push_back(std::move(token));
    values_.insert(values_.end(), vec.begin(), vec.end());
    return true;
  }

  std::span<const double> lookup(std::string_view token) const {
    auto it = index_.find(std::string(token));
    if (it == index_.end()) return zero_;
    return std::span<const double>(values_).subspan(it->second * dimension_, dimension_);
  }

  /// Tokens in insertion (file) order.
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

 private:
  std::size_t dimension_ = 0;
  std::vector<double> zero_;
  std::vector<std::string> tokens_;
  std::vector<double> values_;
  std::unordered_map<std::string, std::size_t> index_;
};

namespace detail {

inline std::vector<std::string_view> split_spaces(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t pos = 0;
  while (pos < line.size()) {
    while (pos < line.size() && line[pos] == ' ') ++pos;
    if (pos >= line.size()) break;
    std::size_t end = line.find(' ', pos);
    if (end == std::string_view::npos) end = line.size();
    fields.push_back(line.substr(pos, end - pos));
    pos = end;
  }
  return fields;
}

inline std::optional<double> parse_double(std::string_view text) {
  double value = 0.0;
  const char* first = text.data();
  const char* last = text.data() + text.size();
  if (first != last && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last || !std::isfinite(value)) return std::nullopt;
  return value;
}

inline void strip_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

}  // namespace detail

/// Reads `token v1 ... vd` lines. The dimension comes from the first line.
inline StaticEmbeddingTable read_static_text(std::istream& in, std::string_view source = "<stream>") {
  StaticEmbeddingTable table;
  bool have_dim = false;
  std::string line;
  std::size_t line_no = 0;
  std::vector<double> vec;
  while (std::getline(in, line)) {
    ++line_no;
    detail::strip_cr(line);
    const auto fields = detail::split_spaces(line);
    if (fields.empty()) continue;
    if (fields.size() < 2) fail(ErrorKind::kParse, source, ":", line_no, ": no vector values");
    if (!have_dim) {
      table = StaticEmbeddingTable(fields.size() - 1);
      have_dim = true;
    }
    if (fields.size() - 1 != table.dimension()) {
      fail(ErrorKind::kParse, source, ":", line_no, ": expected ", table.dimension(), " values, found ",
           fields.size() - 1);
    }
    vec.clear();
    for (std::size_t i = 1; i < fields.size(); ++i) {
      auto v = detail::parse_double(fields[i]);
      if (!v) fail(ErrorKind::kParse, source, ":", line_no, ": non-numeric field '", fields[i], "'");
      vec.push_back(*v);
    }
    table.insert(std::string(fields[0]), vec);
  }
  return table;
}

inline StaticEmbeddingTable load_static_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIo, "cannot open static embeddings '", path, "'");
  return read_static_text(in, path);
}

inline void write_static_text(std::ostream& out, const StaticEmbeddingTable& table) {
  char buf[64];
  for (const auto& token : table.tokens()) {
    out << token;
    for (double v : table.lookup(token)) {
      auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
      out << ' ' << std::string_view(buf, static_cast<std::size_t>(ptr - buf));
    }
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Contextual layer files ("CEMB", little-endian)
//
//   magic "CEMB" | u32 version=1 | u32 layer_index | u32 dimension |
//   u32 sentence_count | per sentence: u32 sentence_index, u32 token_count,
//   token_count*dimension float32 row-major
// ---------------------------------------------------------------------------

inline constexpr char kContextualMagic[4] = {'C', 'E', 'M', 'B'};
inline constexpr std::uint32_t kContextualVersion = 1;

struct ContextualSentence {
  std::uint32_t sentence_index = 0;
  std::uint32_t token_count = 0;
  std::vector<float> values;  // token_count * dimension
};

/// Token-aligned vectors from one layer of a contextual encoder.
class ContextualLayerFile {
 public:
  ContextualLayerFile() = default;
  ContextualLayerFile(std::uint32_t layer_index, std::uint32_t dimension)
      : layer_index_(layer_index), dimension_(dimension) {
    if (layer_index < 1) fail(ErrorKind::kFormat, "layer index must be >= 1");
    if (dimension == 0) fail(ErrorKind::kFormat, "layer dimension must be positive");
  }

  std::uint32_t layer_index() const noexcept { return layer_index_; }
  std::uint32_t dimension() const noexcept { return dimension_; }
  std::size_t sentence_count() const noexcept { return sentences_.size(); }
  const std::vector<ContextualSentence>& sentences() const noexcept { return sentences_; }

  void add(ContextualSentence sentence) {
    if (sentence.values.size() != std::size_t{sentence.token_count} * dimension_) {
      fail(ErrorKind::kFormat, "sentence ", sentence.sentence_index, ": ", sentence.values.size(),
           " values for ", sentence.token_count, " tokens of dimension ", dimension_);
    }
    if (position_.count(sentence.sentence_index)) {
      fail(ErrorKind::kFormat, "duplicate sentence index ", sentence.sentence_index);
    }
    position_.emplace(sentence.sentence_index, sentences_.size());
    sentences_.push_back(std::move(sentence));
  }

  void add(std::uint32_t sentence_index, std::span<const double> rows, std::size_t token_count) {
    ContextualSentence s;
    s.sentence_index = sentence_index;
    s.token_count = static_cast<std::uint32_t>(token_count);
    s.values.assign(rows.begin(), rows.end());
    add(std::move(s));
  }

  const ContextualSentence* find(std::uint32_t sentence_index) const {
    auto it = position_.find(sentence_index);
    return it == position_.end() ? nullptr : &sentences_[it->second];
  }

  /// The sentence as a (tokens × dimension) matrix of doubles.
  Tensor matrix(std::uint32_t sentence_index) const {
    const ContextualSentence* s = find(sentence_index);
    if (!s) fail(ErrorKind::kAlignment, "layer ", layer_index_, " has no sentence ", sentence_index);
    if (s->token_count == 0) fail(ErrorKind::kAlignment, "sentence ", sentence_index, " has no tokens");
    return Tensor::matrix(s->token_count, dimension_, std::vector<double>(s->values.begin(), s->values.end()));
  }

  std::span<const float> token_vector(std::uint32_t sentence_index, std::uint32_t token) const {
    const ContextualSentence* s = find(sentence_index);
    if (!s) fail(ErrorKind::kAlignment, "layer ", layer_index_, " has no sentence ", sentence_index);
    if (token >= s->token_count) {
      fail(ErrorKind::kAlignment, "sentence ", sentence_index, " has ", s->token_count, " tokens, asked for ", token);
    }
    return std::span<const float>(s->values).subspan(std::size_t{token} * dimension_, dimension_);
  }

 private:
  std::uint32_t layer_index_ = 1;
  std::uint32_t dimension_ = 1;
  std::vector<ContextualSentence> sentences_;
  std::map<std::uint32_t, std::size_t> position_;
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

/// Sequential little-endian reader over an in-memory buffer.
class ByteReader {
 public:
  ByteReader(std::string_view bytes, std::string source) : bytes_(bytes), source_(std::move(source)) {}

  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

  void need(std::size_t n, std::string_view what) const {
    if (remaining() < n) fail(ErrorKind::kIo, source_, ": truncated while reading ", what);
  }

  std::uint32_t u32(std::string_view what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{static_cast<unsigned char>(bytes_[pos_ + i])} << (8 * i);
    pos_ += 4;
    return v;
  }

  std::uint64_t u64(std::string_view what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{static_cast<unsigned char>(bytes_[pos_ + i])} << (8 * i);
    pos_ += 8;
    return v;
  }

  std::string_view bytes(std::size_t n, std::string_view what) {
    need(n, what);
    auto out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  const std::string& source() const noexcept { return source_; }

 private:
  std::string_view bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

inline std::string read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open '", path, "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file_bytes(const std::string& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot write '", path, "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::kIo, "write to '", path, "' failed");
}

}  // namespace detail

inline std::string encode_contextual(const ContextualLayerFile& file) {
  std::string out(kContextualMagic, 4);
  detail::put_u32(out, kContextualVersion);
  detail::put_u32(out, file.layer_index());
  detail::put_u32(out, file.dimension());
  detail::put_u32(out, static_cast<std::uint32_t>(file.sentence_count()));
  for (const auto& s : file.sentences()) {
    detail::put_u32(out, s.sentence_index);
    detail::put_u32(out, s.token_count);
    for (float v : s.values) detail::put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

inline ContextualLayerFile decode_contextual(std::string_view bytes, std::string source = "<buffer>") {
  detail::ByteReader in(bytes, std::move(source));
  if (in.remaining() < 4 || std::memcmp(bytes.data(), kContextualMagic, 4) != 0) {
    fail(ErrorKind::kFormat, in.source(), ": bad magic, expected CEMB");
  }
  in.bytes(4, "magic");
  const std::uint32_t version = in.u32("version");
  if (version != kContextualVersion) fail(ErrorKind::kFormat, in.source(), ": unsupported version ", version);
  const std::uint32_t layer = in.u32("layer index");
  const std::uint32_t dim = in.u32("dimension");
  const std::uint32_t count = in.u32("sentence count");
  if (layer < 1) fail(ErrorKind::kFormat, in.source(), ": layer index must be >= 1");
  if (dim == 0) fail(ErrorKind::kFormat, in.source(), ": dimension must be positive");
  ContextualLayerFile file(layer, dim);
  for (std::uint32_t s = 0; s < count; ++s) {
    ContextualSentence sentence;
    sentence.sentence_index = in.u32("sentence index");
    sentence.token_count = in.u32("token count");
    const std::size_t floats = std::size_t{sentence.token_count} * dim;
    if (in.remaining() < floats * 4) {
      // A whole number of floats that simply disagrees with the header is a
      // layout error; anything else is a cut-off file.
      if (s + 1 == count && in.remaining() > 0 && in.remaining() % 4 == 0) {
        fail(ErrorKind::kFormat, in.source(), ": sentence ", sentence.sentence_index, " carries ",
             in.remaining() / 4, " floats, header implies ", floats);
      }
      fail(ErrorKind::kIo, in.source(), ": truncated payload in sentence ", sentence.sentence_index);
    }
    auto raw = in.bytes(floats * 4, "payload");
    sentence.values.resize(floats);
    for (std::size_t i = 0; i < floats; ++i) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) bits |= std::uint32_t{static_cast<unsigned char>(raw[i * 4 + b])} << (8 * b);
      const float v = std::bit_cast<float>(bits);
      if (!std::isfinite(v)) {
        fail(ErrorKind::kFormat, in.source(), ": non-finite value in sentence ", sentence.sentence_index);
      }
      sentence.values[i] = v;
    }
    file.add(std::move(sentence));
  }
  if (in.remaining() != 0) {
    fail(ErrorKind::kFormat, in.source(), ": ", in.remaining(), " trailing bytes after the declared sentences");
  }
  return file;
}

inline ContextualLayerFile load_contextual(const std::string& path) {
  return decode_contextual(detail::read_file_bytes(path), path);
}

inline void write_contextual(const std::string& path, const ContextualLayerFile& file) {
  detail::write_file_bytes(path, encode_contextual(file));
}

// ---------------------------------------------------------------------------
// Channel assembly
// ---------------------------------------------------------------------------

enum class Channel { kGlove, kElmo, kBert };

inline char channel_code(Channel c) {
  switch (c) {
    case Channel::kGlove: return 'G';
    case Channel::kElmo: return 'E';
    case Channel::kBert: return 'B';
  }
  return '?';
}

inline std::string channels_string(std::span<const Channel> channels) {
  std::string out;
  for (Channel c : channels) out.push_back(channel_code(c));
  return out;
}

/// Parses "GEB", "G,E,B", "EB", ... Order is normalised to G, E, B.
inline std::vector<Channel> parse_channels(std::string_view text) {
  bool seen[3] = {false, false, false};
  for (char ch : text) {
    switch (ch) {
      case 'G': case 'g': seen[0] = true; break;
      case 'E': case 'e': seen[1] = true; break;
      case 'B': case 'b': seen[2] = true; break;
      case ',': case ' ': break;
      default: fail(ErrorKind::kParse, "unknown channel '", std::string(1, ch), "' in '", text, "'");
    }
  }
  std::vector<Channel> out;
  if (seen[0]) out.push_back(Channel::kGlove);
  if (seen[1]) out.push_back(Channel::kElmo);
  if (seen[2]) out.push_back(Channel::kBert);
  if (out.empty()) fail(ErrorKind::kParse, "no channels in '", text, "'");
  return out;
}

/// The (channel × position × dimension) convolution input.
struct ChannelStack {
  Tensor values;
  std::vector<Channel> order;

  std::size_t channels() const { return values.dim(0); }
  std::size_t length() const { return values.dim(1); }
  std::size_t dimension() const { return values.dim(2); }
};

inline ChannelStack stack_channels(Tape& tape, const std::vector<Tensor>& matrices, std::vector<Channel> order) {
  if (matrices.size() != order.size()) {
    fail(ErrorKind::kDimension, matrices.size(), " matrices for ", order.size(), " channel labels");
  }
  return ChannelStack{stack(tape, matrices), std::move(order)};
}

/// Splits a stack back into its per-channel matrices (untracked copies).
inline std::vector<Tensor> unstack(const ChannelStack& s) {
  std::vector<Tensor> out;
  const std::size_t block = s.length() * s.dimension();
  const auto v = s.values.data();
  for (std::size_t c = 0; c < s.channels(); ++c) {
    out.push_back(Tensor::matrix(s.length(), s.dimension(),
                                 std::vector<double>(v.begin() + c * block, v.begin() + (c + 1) * block)));
  }
  return out;
}

/// Affine map of static rows (n×s) into the unified dimension: rows·Wᵀ + b.
inline Tensor project_static(Tape& tape, const Tensor& rows, const Tensor& weight, const Tensor& bias) {
  return linear(tape, rows, weight, bias);
}

/// Single-vector form: returns a (d) vector.
inline Tensor project_static(Tape& tape, std::span<const double> vec, const Tensor& weight, const Tensor& bias) {
  Tensor row = Tensor::matrix(1, vec.size(), std::vector<double>(vec.begin(), vec.end()));
  Tensor out = linear(tape, row, weight, bias);
  return detail::emit(tape, "reshape", {out}, {out.dim(1)}, out.values(), [out](Tensor& r) mutable {
    const auto g = r.grad();
    auto d = out.mutable_grad();
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
  });
}

/// Static vector ⊕ PoS one-hot ⊕ abstractness score.
inline std::vector<double> build_gpa(std::span<const double> static_vec, std::span<const double> pos_one_hot,
                                     double abstractness) {
  if (!(abstractness >= 0.0 && abstractness <= 1.0)) {
    fail(ErrorKind::kRange, "abstractness ", abstractness, " outside [0,1]");
  }
  std::vector<double> out;
  out.reserve(static_vec.size() + pos_one_hot.size() + 1);
  out.insert(out.end(), static_vec.begin(), static_vec.end());
  out.insert(out.end(), pos_one_hot.begin(), pos_one_hot.end());
  out.push_back(abstractness);
  return out;
}

}  // namespace metaseq
