#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "storm/attention.hpp"
#include "storm/hsfa.hpp"
#include "storm/mat.hpp"
#include "storm/tom.hpp"

namespace storm::io {

/// All containers are little-endian with float32 payloads.
///
/// FMAP feature file: magic "FMAP", u16 version, u32 P, u32 C, u32 grid_h,
///   u32 grid_w, then P*C float32 row-major.
/// HSFA checkpoint: magic "HSFA", u16 version, u32 n_layers, u32 view_count,
///   u32 channels, u32 text_dim, u32 head_count, u32 upsample_scale,
///   f32 epsilon, then parameter blocks in HsfaModel::parameters() order.
/// TOMM checkpoint: magic "TOMM", u16 version, u32 channels,
///   u32 attention_layers, u32 head_count, then parameter blocks in
///   TomModel::parameters() order.
/// TOMD dataset: magic "TOMD", u16 version, u32 P, u32 C, u64 count, then per
///   record: u8 label, candidate block (P*C f32), reference block (P*C f32),
///   u64 seed.

void save_feature_map(const std::string& path, const FeatureMap<float>& fm);
FeatureMap<float> load_feature_map(const std::string& path);

void save_hsfa(const std::string& path, const hsfa::HsfaModel<float>& model);
hsfa::HsfaModel<float> load_hsfa(const std::string& path);

void save_tom(const std::string& path, const tom::TomModel<float>& model);
tom::TomModel<float> load_tom(const std::string& path);

/// Streaming dataset writer so large pair counts never sit in memory.
class TrackingDatasetWriter {
 public:
  TrackingDatasetWriter(const std::string& path, int patches, int channels, std::uint64_t count);
  ~TrackingDatasetWriter();
  TrackingDatasetWriter(const TrackingDatasetWriter&) = delete;
  TrackingDatasetWriter& operator=(const TrackingDatasetWriter&) = delete;

  void append(const tom::TrackingPair<float>& pair);
  void close();

 private:
  struct Impl;
  Impl* impl_;
};

void save_tracking_dataset(const std::string& path, const std::vector<tom::TrackingPair<float>>& pairs);
std::vector<tom::TrackingPair<float>> load_tracking_dataset(const std::string& path);

/// 16-bit PGM (P5, maxval 65535, big-endian samples per the PNM spec);
/// values are clamped to [0,1] and scaled.
template <class Real>
void save_pgm16(const std::string& path, const Mat<Real>& heatmap);

}  // namespace storm::io
