#include "storm/io.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace storm::io {

namespace {

void put_bytes(std::ostream& os, const void* p, std::size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void put_u8(std::ostream& os, std::uint8_t v) { put_bytes(os, &v, 1); }

void put_u16(std::ostream& os, std::uint16_t v) {
  const std::uint8_t b[2] = {static_cast<std::uint8_t>(v), static_cast<std::uint8_t>(v >> 8)};
  put_bytes(os, b, 2);
}

void put_u32(std::ostream& os, std::uint32_t v) {
  std::uint8_t b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<std::uint8_t>(v >> (8 * i));
  put_bytes(os, b, 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
  std::uint8_t b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<std::uint8_t>(v >> (8 * i));
  put_bytes(os, b, 8);
}

void put_f32(std::ostream& os, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(os, bits);
}

void get_bytes(std::istream& is, void* p, std::size_t n, const char* what) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (!is) throw std::runtime_error(std::string("truncated file while reading ") + what);
}

std::uint8_t get_u8(std::istream& is, const char* what) {
  std::uint8_t v;
  get_bytes(is, &v, 1, what);
  return v;
}

std::uint16_t get_u16(std::istream& is, const char* what) {
  std::uint8_t b[2];
  get_bytes(is, b, 2, what);
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

std::uint32_t get_u32(std::istream& is, const char* what) {
  std::uint8_t b[4];
  get_bytes(is, b, 4, what);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t get_u64(std::istream& is, const char* what) {
  std::uint8_t b[8];
  get_bytes(is, b, 8, what);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

float get_f32(std::istream& is, const char* what) {
  const std::uint32_t bits = get_u32(is, what);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

void put_magic(std::ostream& os, const char magic[5]) { put_bytes(os, magic, 4); }

void expect_magic(std::istream& is, const char magic[5], const char* what) {
  char got[4];
  get_bytes(is, got, 4, what);
  if (std::memcmp(got, magic, 4) != 0) throw std::runtime_error(std::string(what) + ": bad magic");
}

void put_block(std::ostream& os, const Mat<float>& m) {
  for (float v : m.data) put_f32(os, v);
}

void get_block(std::istream& is, Mat<float>& m, const char* what) {
  for (float& v : m.data) v = get_f32(is, what);
}

std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  return os;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open for reading: " + path);
  return is;
}

}  // namespace

void save_feature_map(const std::string& path, const FeatureMap<float>& fm) {
  auto os = open_out(path);
  put_magic(os, "FMAP");
  put_u16(os, 1);
  put_u32(os, static_cast<std::uint32_t>(fm.patches()));
  put_u32(os, static_cast<std::uint32_t>(fm.channels()));
  put_u32(os, static_cast<std::uint32_t>(fm.grid_h));
  put_u32(os, static_cast<std::uint32_t>(fm.grid_w));
  put_block(os, fm.data);
  if (!os) throw std::runtime_error("write failed: " + path);
}

FeatureMap<float> load_feature_map(const std::string& path) {
  auto is = open_in(path);
  expect_magic(is, "FMAP", "feature map");
  if (get_u16(is, "version") != 1) throw std::runtime_error("feature map: unsupported version");
  const auto P = get_u32(is, "P");
  const auto C = get_u32(is, "C");
  const auto gh = get_u32(is, "grid_h");
  const auto gw = get_u32(is, "grid_w");
  Mat<float> m(static_cast<int>(P), static_cast<int>(C));
  get_block(is, m, "feature data");
  return FeatureMap<float>(std::move(m), static_cast<int>(gh), static_cast<int>(gw));
}

void save_hsfa(const std::string& path, const hsfa::HsfaModel<float>& model) {
  auto os = open_out(path);
  put_magic(os, "HSFA");
  put_u16(os, 1);
  put_u32(os, static_cast<std::uint32_t>(model.n_layers));
  put_u32(os, static_cast<std::uint32_t>(model.view_count));
  put_u32(os, static_cast<std::uint32_t>(model.channels));
  put_u32(os, static_cast<std::uint32_t>(model.text_dim));
  put_u32(os, static_cast<std::uint32_t>(model.head_count));
  put_u32(os, static_cast<std::uint32_t>(model.upsample_scale));
  put_f32(os, model.injection.epsilon);
  const auto params = model.parameters();
  for (const Mat<float>* p : params) put_block(os, *p);
  if (!os) throw std::runtime_error("write failed: " + path);
}

hsfa::HsfaModel<float> load_hsfa(const std::string& path) {
  auto is = open_in(path);
  expect_magic(is, "HSFA", "hsfa checkpoint");
  if (get_u16(is, "version") != 1) throw std::runtime_error("hsfa checkpoint: unsupported version");
  hsfa::HsfaConfig<float> cfg;
  cfg.n_layers = static_cast<int>(get_u32(is, "n_layers"));
  cfg.view_count = static_cast<int>(get_u32(is, "view_count"));
  cfg.channels = static_cast<int>(get_u32(is, "channels"));
  cfg.text_dim = static_cast<int>(get_u32(is, "text_dim"));
  cfg.head_count = static_cast<int>(get_u32(is, "head_count"));
  cfg.upsample_scale = static_cast<int>(get_u32(is, "upsample_scale"));
  cfg.epsilon = get_f32(is, "epsilon");
  hsfa::HsfaModel<float> model = hsfa::HsfaModel<float>::init(cfg, 0);
  model.injection.epsilon = cfg.epsilon;
  for (Mat<float>* p : model.parameters()) get_block(is, *p, "hsfa parameters");
  return model;
}

void save_tom(const std::string& path, const tom::TomModel<float>& model) {
  auto os = open_out(path);
  put_magic(os, "TOMM");
  put_u16(os, 1);
  put_u32(os, static_cast<std::uint32_t>(model.channels()));
  put_u32(os, static_cast<std::uint32_t>(model.attention_layers()));
  put_u32(os, static_cast<std::uint32_t>(model.layers.empty() ? 1 : model.layers.front().head_count));
  const auto params = model.parameters();
  for (const Mat<float>* p : params) put_block(os, *p);
  if (!os) throw std::runtime_error("write failed: " + path);
}

tom::TomModel<float> load_tom(const std::string& path) {
  auto is = open_in(path);
  expect_magic(is, "TOMM", "tom checkpoint");
  if (get_u16(is, "version") != 1) throw std::runtime_error("tom checkpoint: unsupported version");
  const int channels = static_cast<int>(get_u32(is, "channels"));
  const int layers = static_cast<int>(get_u32(is, "attention_layers"));
  const int heads = static_cast<int>(get_u32(is, "head_count"));
  tom::TomModel<float> model = tom::TomModel<float>::init(channels, layers, 0, heads);
  for (Mat<float>* p : model.parameters()) get_block(is, *p, "tom parameters");
  return model;
}

struct TrackingDatasetWriter::Impl {
  std::ofstream os;
  std::string path;
  int patches;
  int channels;
  std::uint64_t expected;
  std::uint64_t written = 0;
};

TrackingDatasetWriter::TrackingDatasetWriter(const std::string& path, int patches, int channels, std::uint64_t count)
    : impl_(new Impl{open_out(path), path, patches, channels, count}) {
  put_magic(impl_->os, "TOMD");
  put_u16(impl_->os, 1);
  put_u32(impl_->os, static_cast<std::uint32_t>(patches));
  put_u32(impl_->os, static_cast<std::uint32_t>(channels));
  put_u64(impl_->os, count);
}

TrackingDatasetWriter::~TrackingDatasetWriter() {
  delete impl_;
}

void TrackingDatasetWriter::append(const tom::TrackingPair<float>& pair) {
  if (pair.candidate.rows != impl_->patches || pair.candidate.cols != impl_->channels ||
      pair.reference.rows != impl_->patches || pair.reference.cols != impl_->channels)
    throw std::invalid_argument("TrackingDatasetWriter: pair shape mismatch");
  if (impl_->written == impl_->expected) throw std::logic_error("TrackingDatasetWriter: more pairs than declared");
  put_u8(impl_->os, pair.label);
  put_block(impl_->os, pair.candidate);
  put_block(impl_->os, pair.reference);
  put_u64(impl_->os, pair.seed);
  ++impl_->written;
}

void TrackingDatasetWriter::close() {
  if (impl_->written != impl_->expected) throw std::logic_error("TrackingDatasetWriter: fewer pairs than declared");
  impl_->os.flush();
  if (!impl_->os) throw std::runtime_error("write failed: " + impl_->path);
  impl_->os.close();
}

void save_tracking_dataset(const std::string& path, const std::vector<tom::TrackingPair<float>>& pairs) {
  if (pairs.empty()) throw std::invalid_argument("save_tracking_dataset: empty dataset");
  TrackingDatasetWriter w(path, pairs.front().candidate.rows, pairs.front().candidate.cols, pairs.size());
  for (const auto& p : pairs) w.append(p);
  w.close();
}

std::vector<tom::TrackingPair<float>> load_tracking_dataset(const std::string& path) {
  auto is = open_in(path);
  expect_magic(is, "TOMD", "tracking dataset");
  if (get_u16(is, "version") != 1) throw std::runtime_error("tracking dataset: unsupported version");
  const int P = static_cast<int>(get_u32(is, "P"));
  const int C = static_cast<int>(get_u32(is, "C"));
  const std::uint64_t count = get_u64(is, "count");
  std::vector<tom::TrackingPair<float>> out;
  out.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    tom::TrackingPair<float> p;
    p.label = get_u8(is, "label");
    p.candidate = Mat<float>(P, C);
    get_block(is, p.candidate, "candidate block");
    p.reference = Mat<float>(P, C);
    get_block(is, p.reference, "reference block");
    p.seed = get_u64(is, "seed");
    p.kind = p.label ? tom::PairKind::Positive : tom::PairKind::CrossObject;
    out.push_back(std::move(p));
  }
  return out;
}

template <class Real>
void save_pgm16(const std::string& path, const Mat<Real>& heatmap) {
  auto os = open_out(path);
  os << "P5\n" << heatmap.cols << " " << heatmap.rows << "\n65535\n";
  for (Real raw : heatmap.data) {
    double v = static_cast<double>(raw);
    v = std::min(1.0, std::max(0.0, v));
    const auto q = static_cast<std::uint16_t>(std::lround(v * 65535.0));
    const std::uint8_t b[2] = {static_cast<std::uint8_t>(q >> 8), static_cast<std::uint8_t>(q & 0xff)};
    put_bytes(os, b, 2);
  }
  if (!os) throw std::runtime_error("write failed: " + path);
}

template void save_pgm16<float>(const std::string&, const Mat<float>&);
template void save_pgm16<double>(const std::string&, const Mat<double>&);

}  // namespace storm::io
