#include "morphdose/checkpoint.hpp"

#include <bit>
#include <cstdint>

#include "morphdose/error.hpp"
#include "morphdose/text_io.hpp"

namespace morphdose {

Eigen::VectorXd QModel::q_values(const StateVector& raw_state) const {
  return morphdose::q_values(params, normalizer.apply(raw_state));
}

namespace {

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void f64(double d) {
    const auto v = std::bit_cast<std::uint64_t>(d);
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void bytes(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_ += s;
  }
  void raw(std::string_view s) { out_ += s; }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view in) : in_(in) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  double f64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return std::bit_cast<double>(v);
  }
  std::string bytes() {
    const auto n = u32();
    need(n);
    std::string s(in_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  std::string_view raw(std::size_t n) {
    need(n);
    auto s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  void need(std::size_t n) const {
    require(pos_ + n <= in_.size(), ErrorKind::Format, "checkpoint truncated");
  }
  std::string_view in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const Checkpoint& checkpoint) {
  const auto& p = checkpoint.model.params;
  const auto& norm = checkpoint.model.normalizer;
  require(norm.dim() == p.shape.input_dim, ErrorKind::Dimension, "normalizer does not match network input");
  Writer w;
  w.raw("MDQN");
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(p.shape.input_dim));
  w.u32(static_cast<std::uint32_t>(p.shape.hidden_dim));
  w.u32(static_cast<std::uint32_t>(p.shape.stream_dim));
  w.u32(static_cast<std::uint32_t>(p.shape.num_actions));
  w.f64(p.shape.leaky_slope);
  w.u32(static_cast<std::uint32_t>(norm.dim()));
  for (Eigen::Index i = 0; i < norm.dim(); ++i) w.f64(norm.mean[i]);
  for (Eigen::Index i = 0; i < norm.dim(); ++i) w.f64(norm.scale[i]);
  w.u32(static_cast<std::uint32_t>(checkpoint.metadata.size()));
  for (const auto& [k, v] : checkpoint.metadata) {
    w.bytes(k);
    w.bytes(v);
  }
  for (const auto& layer : p.weights.layers) {
    w.u32(static_cast<std::uint32_t>(layer.weight.rows()));
    w.u32(static_cast<std::uint32_t>(layer.weight.cols()));
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) w.f64(layer.weight(r, c));
    }
    for (Eigen::Index r = 0; r < layer.bias.size(); ++r) w.f64(layer.bias[r]);
  }
  return w.take();
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  Reader r(bytes);
  require(r.raw(4) == "MDQN", ErrorKind::Format, "not a checkpoint file");
  const auto version = r.u32();
  require(version == kCheckpointVersion, ErrorKind::Format, "unsupported checkpoint version " + std::to_string(version));
  QNetShape shape;
  shape.input_dim = static_cast<int>(r.u32());
  shape.hidden_dim = static_cast<int>(r.u32());
  shape.stream_dim = static_cast<int>(r.u32());
  shape.num_actions = static_cast<int>(r.u32());
  shape.leaky_slope = r.f64();
  for (int d : {shape.input_dim, shape.hidden_dim, shape.stream_dim, shape.num_actions}) {
    require(d > 0 && d <= 4096, ErrorKind::Format, "implausible layer size in checkpoint header");
  }
  require(shape.leaky_slope >= 0.0 && shape.leaky_slope < 1.0, ErrorKind::Format, "bad leaky slope in checkpoint");

  Checkpoint ck;
  ck.model.params = QParams::zeros(shape);
  const auto norm_dim = static_cast<Eigen::Index>(r.u32());
  require(norm_dim == shape.input_dim, ErrorKind::Format, "normalizer dimension mismatch");
  ck.model.normalizer.mean.resize(norm_dim);
  ck.model.normalizer.scale.resize(norm_dim);
  for (Eigen::Index i = 0; i < norm_dim; ++i) ck.model.normalizer.mean[i] = r.f64();
  for (Eigen::Index i = 0; i < norm_dim; ++i) ck.model.normalizer.scale[i] = r.f64();
  require(ck.model.normalizer.mean.allFinite() && ck.model.normalizer.scale.allFinite() &&
              (ck.model.normalizer.scale.array() > 0.0).all(),
          ErrorKind::Format, "checkpoint normalizer must be finite with positive scales");
  const auto n_meta = r.u32();
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    auto k = r.bytes();
    ck.metadata[std::move(k)] = r.bytes();
  }
  for (auto& layer : ck.model.params.weights.layers) {
    const auto rows = static_cast<Eigen::Index>(r.u32());
    const auto cols = static_cast<Eigen::Index>(r.u32());
    require(rows == layer.weight.rows() && cols == layer.weight.cols(), ErrorKind::Format,
            "layer shape does not match header");
    for (Eigen::Index i = 0; i < rows; ++i) {
      for (Eigen::Index j = 0; j < cols; ++j) layer.weight(i, j) = r.f64();
    }
    for (Eigen::Index i = 0; i < rows; ++i) layer.bias[i] = r.f64();
  }
  require(r.done(), ErrorKind::Format, "trailing bytes after checkpoint");
  require(ck.model.params.weights.all_finite(), ErrorKind::Format, "checkpoint holds non-finite weights");
  return ck;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  write_file(path, encode_checkpoint(checkpoint));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

}  // namespace morphdose
