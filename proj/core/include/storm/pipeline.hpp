#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "storm/attention.hpp"
#include "storm/geometry.hpp"
#include "storm/hsfa.hpp"
#include "storm/losses.hpp"
#include "storm/optim.hpp"
#include "storm/prompts.hpp"
#include "storm/tom.hpp"

namespace storm::pipeline {

using storm::FeatureMap;
using storm::Mat;
using storm::Rng;

// ---- synthetic world -------------------------------------------------------

struct SceneConfig {
  int grid_h = 14;
  int grid_w = 14;
  int channels = 32;
  int object_grid = 6;  // objects occupy object_grid^2 tokens
  int archetype_count = 2;
  double bg_sigma = 0.3;
  double foreground_scale = 1.0;
  double mu_scale = 0.2;
  double pattern_scale = 1.2;
  double view_scale = 0.8;
  double noise_sigma = 0.5;
  int text_dim = 16;
  std::uint64_t world_seed = 1;
};

template <class Real>
struct Scene {
  FeatureMap<Real> features;
  prompts::BinaryMask gt_mask;  // token grid; 1 on the target block
  int target_archetype = 0;
  int target_r0 = 0, target_c0 = 0;
  int distractor_archetype = 1;
  int distractor_r0 = 0, distractor_c0 = 0;
  geometry::Vec3 target_view{0, 0, 1};
};

/// Scenes are background noise plus a target block and one distractor block
/// of a different archetype; which archetype is the target varies per scene,
/// so locating it requires the reference views (or the text embedding).
template <class Real>
class SyntheticWorld {
 public:
  explicit SyntheticWorld(SceneConfig cfg);

  const SceneConfig& config() const { return cfg_; }
  const tom::ArchetypeLibrary<Real>& library() const { return lib_; }

  Scene<Real> make_scene(Rng& rng) const;

  /// Scripted variant: fixed target archetype, placement and view; the
  /// distractor is placed deterministically from `rng` away from the target.
  Scene<Real> make_scene_at(int target_archetype, int r0, int c0, const geometry::Vec3& view, Rng& rng,
                            bool with_distractor = true) const;

  /// Background-only frame (no objects).
  FeatureMap<Real> make_background(Rng& rng) const;

  /// m reference views of an archetype at evenly spread directions.
  std::vector<FeatureMap<Real>> reference_views(int archetype, int m, std::uint64_t seed) const;

  /// Synthetic per-archetype text embedding (stands in for an encoded
  /// description of the object).
  Mat<Real> text_embedding(int archetype) const;

 private:
  std::pair<int, int> random_placement(Rng& rng) const;

  SceneConfig cfg_;
  tom::ArchetypeLibrary<Real> lib_;
  std::vector<Mat<Real>> text_;
};

// ---- crop extraction -------------------------------------------------------

/// Token-grid mask induced by a heatmap: a token is selected when any heatmap
/// cell covering it reaches the threshold.
template <class Real>
prompts::BinaryMask heatmap_token_mask(const hsfa::RoiHeatmap<Real>& h, int grid_h, int grid_w, double threshold);

/// side x side token window anchored at (r0, c0); cells outside the frame are
/// zero-filled.
template <class Real>
Mat<Real> extract_window(const FeatureMap<Real>& frame, int r0, int c0, int side);

/// As extract_window, but only tokens selected by the mask contribute; the
/// rest are zero-filled (crop restricted to the detected ROI).
template <class Real>
Mat<Real> extract_masked_window(const FeatureMap<Real>& frame, const prompts::BinaryMask& token_mask, int r0, int c0,
                                int side);

// ---- registration ----------------------------------------------------------

struct RegistrationConfig {
  double heatmap_threshold = 0.5;
  int crop_grid = 6;
  std::int64_t object_id = 0;
  int frame_index = -1;
};

template <class Real>
struct RegistrationResult {
  bool ok = false;
  hsfa::RoiHeatmap<Real> heatmap;
  prompts::PromptSet prompt_set;
  tom::CropFeature<Real> crop;
  int window_r0 = 0, window_c0 = 0;  // token coords of the crop window origin
};

/// Heatmap -> binarize -> prompts -> ROI crop. Returns ok=false (with the
/// heatmap filled in) when the binarized ROI is empty.
template <class Real>
RegistrationResult<Real> run_registration(const hsfa::HsfaModel<Real>& model, const FeatureMap<Real>& frame,
                                          std::span<const FeatureMap<Real>> refs, const RegistrationConfig& cfg,
                                          const Mat<Real>* text_embedding = nullptr);

// ---- scenario scripts ------------------------------------------------------

enum class FrameEventKind { Normal, Occluded, Dropped };

struct FrameEvent {
  FrameEventKind kind = FrameEventKind::Normal;
  std::array<int, 4> region{0, 0, 0, 0};  // r0, c0, h, w for Occluded
};

struct ObjectTrack {
  int archetype = 0;
  std::vector<std::array<int, 2>> positions;  // one [row, col] per frame
};

/// Scripted sequence: per-frame events plus object trajectories.
/// objects[0] is the tracked target.
struct ScenarioScript {
  int grid_h = 14, grid_w = 14, channels = 32;
  int object_grid = 6;
  int reference_views = 2;
  std::uint64_t world_seed = 1;
  std::uint64_t noise_seed = 7;
  std::vector<ObjectTrack> objects;
  std::vector<FrameEvent> frames;
  // Optional file-backed inputs (paths to FMAP files); when set, frames and
  // references come from disk instead of the synthetic world.
  std::vector<std::string> feature_files;
  std::vector<std::string> reference_files;

  void validate() const;
  static ScenarioScript from_json(const std::string& text);
  static ScenarioScript from_json_file(const std::string& path);
  std::string to_json() const;
};

// ---- feature providers -----------------------------------------------------

template <class Real>
class FeatureProvider {
 public:
  virtual ~FeatureProvider() = default;
  virtual int frame_count() const = 0;
  virtual FeatureMap<Real> frame(int index) = 0;
  virtual const std::vector<FeatureMap<Real>>& references() = 0;
};

/// Composes frames from the scenario script and a SyntheticWorld; occlusion
/// events zero the scripted region. Deterministic per (scenario, seeds).
template <class Real>
class SyntheticScenarioProvider : public FeatureProvider<Real> {
 public:
  SyntheticScenarioProvider(const ScenarioScript& script, SceneConfig base);

  int frame_count() const override;
  FeatureMap<Real> frame(int index) override;
  const std::vector<FeatureMap<Real>>& references() override;

  const SyntheticWorld<Real>& world() const { return *world_; }

 private:
  ScenarioScript script_;
  std::unique_ptr<SyntheticWorld<Real>> world_;
  std::vector<geometry::Vec3> object_views_;
  std::vector<FeatureMap<Real>> refs_;
};

/// Reads frames and references from FMAP files listed in the scenario.
template <class Real>
class FileBackedProvider : public FeatureProvider<Real> {
 public:
  explicit FileBackedProvider(const ScenarioScript& script);

  int frame_count() const override;
  FeatureMap<Real> frame(int index) override;
  const std::vector<FeatureMap<Real>>& references() override;

 private:
  ScenarioScript script_;
  std::vector<FeatureMap<Real>> refs_;
  bool refs_loaded_ = false;
};

// ---- tracking loop ---------------------------------------------------------

struct TrackOptions {
  double tom_threshold = 0.5;  // 0 disables failure detection
  std::size_t pool_capacity = 8;
  double heatmap_threshold = 0.5;
  int crop_grid = 6;
};

struct FrameLog {
  int frame = -1;
  std::string event;     // normal | occluded | dropped
  std::string action;    // register | step | re_register | register_failed | dropped
  double score = -1;     // pool score for step frames
  std::string state;     // session state after the frame
  std::string decision;  // Continue | ReRegister | (empty)
  double window_iou = -1;  // crop window overlap with the target's true block
  int window_r0 = 0, window_c0 = 0;
};

struct TrackRunResult {
  std::vector<FrameLog> logs;
  int reregistrations = 0;
  int registration_failures = 0;

  std::string to_jsonl() const;
};

/// register -> track -> verify -> re-register loop over a scripted sequence.
template <class Real>
TrackRunResult run_tracking(FeatureProvider<Real>& provider, const hsfa::HsfaModel<Real>& som,
                            const tom::TomModel<Real>& tom_model, const ScenarioScript& script,
                            const TrackOptions& opts);

// ---- toy segmentation training ---------------------------------------------

struct SomTaskConfig {
  SceneConfig scene;
  int reference_views = 2;
  bool use_text = false;       // inject the synthetic text embedding
  std::uint64_t data_seed = 7;
};

struct SomTrainOutcome {
  optim::TrainResult trace;
  double final_iou = 0;      // mean IoU on held-out episodes at threshold 0.5
  int steps_to_target = -1;  // first step where target_iou was reached, or -1
};

/// Trains the model on freshly sampled scenes; when target_iou > 0, training
/// stops at the first evaluation that reaches it.
template <class Real>
SomTrainOutcome train_som(hsfa::HsfaModel<Real>& model, const SomTaskConfig& task, const optim::TrainConfig& cfg,
                          double target_iou = -1.0, int eval_every = 100, int eval_episodes = 20);

/// Mean heatmap IoU at threshold 0.5 over seeded held-out episodes.
template <class Real>
double evaluate_som_iou(const hsfa::HsfaModel<Real>& model, const SomTaskConfig& task, std::uint64_t seed,
                        int episodes);

}  // namespace storm::pipeline
