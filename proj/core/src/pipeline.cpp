#include "storm/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "storm/io.hpp"

#include "json.hpp"

namespace storm::pipeline {

using nlohmann::json;

// ---- synthetic world -------------------------------------------------------

template <class Real>
SyntheticWorld<Real>::SyntheticWorld(SceneConfig cfg) : cfg_(cfg) {
  if (cfg.object_grid > cfg.grid_h || cfg.object_grid > cfg.grid_w)
    throw std::invalid_argument("SyntheticWorld: object does not fit the scene grid");
  typename tom::ArchetypeLibrary<Real>::Scales scales;
  scales.foreground = cfg.foreground_scale;
  scales.mu = cfg.mu_scale;
  scales.pattern = cfg.pattern_scale;
  scales.view = cfg.view_scale;
  scales.noise = cfg.noise_sigma;
  lib_ = tom::ArchetypeLibrary<Real>::make(cfg.archetype_count, cfg.object_grid, cfg.channels,
                                           Rng::derive(cfg.world_seed, 0x57524c44ull), scales);
  for (int a = 0; a < cfg.archetype_count; ++a) {
    Rng rng(Rng::derive(cfg.world_seed, 0x54455854ull + static_cast<std::uint64_t>(a)));
    text_.push_back(random_normal<Real>(1, cfg.text_dim, 0, 1, rng));
  }
}

template <class Real>
std::pair<int, int> SyntheticWorld<Real>::random_placement(Rng& rng) const {
  const int r = rng.uniform_int(cfg_.grid_h - cfg_.object_grid + 1);
  const int c = rng.uniform_int(cfg_.grid_w - cfg_.object_grid + 1);
  return {r, c};
}

namespace {

bool blocks_overlap(int r0, int c0, int r1, int c1, int side) {
  return std::abs(r0 - r1) < side && std::abs(c0 - c1) < side;
}

template <class Real>
void paste_block(Mat<Real>& features, const Mat<Real>& block, int r0, int c0, int grid_w, int side, int channels) {
  for (int u = 0; u < side; ++u)
    for (int v = 0; v < side; ++v)
      for (int ch = 0; ch < channels; ++ch)
        features.at((r0 + u) * grid_w + (c0 + v), ch) = block.at(u * side + v, ch);
}

}  // namespace

template <class Real>
FeatureMap<Real> SyntheticWorld<Real>::make_background(Rng& rng) const {
  Mat<Real> bg = random_normal<Real>(cfg_.grid_h * cfg_.grid_w, cfg_.channels, 0, static_cast<Real>(cfg_.bg_sigma), rng);
  return FeatureMap<Real>(std::move(bg), cfg_.grid_h, cfg_.grid_w);
}

template <class Real>
Scene<Real> SyntheticWorld<Real>::make_scene(Rng& rng) const {
  Scene<Real> s;
  s.target_archetype = rng.uniform_int(cfg_.archetype_count);
  int other = rng.uniform_int(cfg_.archetype_count - 1);
  if (other >= s.target_archetype) ++other;
  s.distractor_archetype = other;
  s.target_view = tom::random_direction(rng);
  const geometry::Vec3 distractor_view = tom::random_direction(rng);

  std::tie(s.target_r0, s.target_c0) = random_placement(rng);
  int dr = 0, dc = 0;
  do {
    std::tie(dr, dc) = random_placement(rng);
  } while (blocks_overlap(s.target_r0, s.target_c0, dr, dc, cfg_.object_grid));
  s.distractor_r0 = dr;
  s.distractor_c0 = dc;

  FeatureMap<Real> fm = make_background(rng);
  paste_block(fm.data, lib_.sample(s.target_archetype, s.target_view, rng), s.target_r0, s.target_c0, cfg_.grid_w,
              cfg_.object_grid, cfg_.channels);
  paste_block(fm.data, lib_.sample(s.distractor_archetype, distractor_view, rng), dr, dc, cfg_.grid_w,
              cfg_.object_grid, cfg_.channels);
  s.features = std::move(fm);

  s.gt_mask = prompts::BinaryMask(cfg_.grid_h, cfg_.grid_w);
  for (int u = 0; u < cfg_.object_grid; ++u)
    for (int v = 0; v < cfg_.object_grid; ++v) s.gt_mask.at(s.target_r0 + u, s.target_c0 + v) = 1;
  return s;
}

template <class Real>
Scene<Real> SyntheticWorld<Real>::make_scene_at(int target_archetype, int r0, int c0, const geometry::Vec3& view,
                                                Rng& rng, bool with_distractor) const {
  if (target_archetype < 0 || target_archetype >= cfg_.archetype_count)
    throw std::invalid_argument("make_scene_at: archetype out of range");
  if (r0 < 0 || c0 < 0 || r0 + cfg_.object_grid > cfg_.grid_h || c0 + cfg_.object_grid > cfg_.grid_w)
    throw std::invalid_argument("make_scene_at: placement outside the grid");
  Scene<Real> s;
  s.target_archetype = target_archetype;
  s.target_r0 = r0;
  s.target_c0 = c0;
  s.target_view = view;

  FeatureMap<Real> fm = make_background(rng);
  paste_block(fm.data, lib_.sample(target_archetype, view, rng), r0, c0, cfg_.grid_w, cfg_.object_grid, cfg_.channels);
  if (with_distractor && cfg_.archetype_count > 1) {
    s.distractor_archetype = (target_archetype + 1) % cfg_.archetype_count;
    const geometry::Vec3 dv = tom::random_direction(rng);
    int dr = 0, dc = 0;
    do {
      std::tie(dr, dc) = random_placement(rng);
    } while (blocks_overlap(r0, c0, dr, dc, cfg_.object_grid));
    s.distractor_r0 = dr;
    s.distractor_c0 = dc;
    paste_block(fm.data, lib_.sample(s.distractor_archetype, dv, rng), dr, dc, cfg_.grid_w, cfg_.object_grid,
                cfg_.channels);
  }
  s.features = std::move(fm);
  s.gt_mask = prompts::BinaryMask(cfg_.grid_h, cfg_.grid_w);
  for (int u = 0; u < cfg_.object_grid; ++u)
    for (int v = 0; v < cfg_.object_grid; ++v) s.gt_mask.at(r0 + u, c0 + v) = 1;
  return s;
}

template <class Real>
std::vector<FeatureMap<Real>> SyntheticWorld<Real>::reference_views(int archetype, int m, std::uint64_t seed) const {
  Rng rng(Rng::derive(seed, 0x52454653ull));
  if (m < 1) throw std::invalid_argument("reference_views: m must be >= 1");
  const auto dirs = geometry::fibonacci_directions(m);
  std::vector<FeatureMap<Real>> out;
  out.reserve(static_cast<std::size_t>(m));
  for (const auto& d : dirs)
    out.emplace_back(lib_.sample(archetype, d, rng), cfg_.object_grid, cfg_.object_grid);
  return out;
}

template <class Real>
Mat<Real> SyntheticWorld<Real>::text_embedding(int archetype) const {
  return text_.at(static_cast<std::size_t>(archetype));
}

// ---- crop extraction -------------------------------------------------------

template <class Real>
prompts::BinaryMask heatmap_token_mask(const hsfa::RoiHeatmap<Real>& h, int grid_h, int grid_w, double threshold) {
  if (grid_h <= 0 || grid_w <= 0 || h.height() % grid_h != 0 || h.width() % grid_w != 0)
    throw std::invalid_argument("heatmap_token_mask: heatmap is not an integer multiple of the token grid");
  const int sr = h.height() / grid_h, sc = h.width() / grid_w;
  prompts::BinaryMask mask(grid_h, grid_w);
  for (int r = 0; r < grid_h; ++r)
    for (int c = 0; c < grid_w; ++c) {
      bool hit = false;
      for (int u = 0; u < sr && !hit; ++u)
        for (int v = 0; v < sc && !hit; ++v)
          hit = static_cast<double>(h.values.at(r * sr + u, c * sc + v)) >= threshold;
      mask.at(r, c) = hit ? 1 : 0;
    }
  return mask;
}

template <class Real>
Mat<Real> extract_window(const FeatureMap<Real>& frame, int r0, int c0, int side) {
  if (side < 1) throw std::invalid_argument("extract_window: side must be >= 1");
  Mat<Real> out(side * side, frame.channels());
  for (int u = 0; u < side; ++u)
    for (int v = 0; v < side; ++v) {
      const int r = r0 + u, c = c0 + v;
      if (r < 0 || r >= frame.grid_h || c < 0 || c >= frame.grid_w) continue;
      for (int ch = 0; ch < frame.channels(); ++ch) out.at(u * side + v, ch) = frame.data.at(r * frame.grid_w + c, ch);
    }
  return out;
}

template <class Real>
Mat<Real> extract_masked_window(const FeatureMap<Real>& frame, const prompts::BinaryMask& token_mask, int r0, int c0,
                                int side) {
  if (token_mask.rows != frame.grid_h || token_mask.cols != frame.grid_w)
    throw std::invalid_argument("extract_masked_window: mask/frame grid mismatch");
  Mat<Real> out(side * side, frame.channels());
  for (int u = 0; u < side; ++u)
    for (int v = 0; v < side; ++v) {
      const int r = r0 + u, c = c0 + v;
      if (r < 0 || r >= frame.grid_h || c < 0 || c >= frame.grid_w) continue;
      if (!token_mask.at(r, c)) continue;
      for (int ch = 0; ch < frame.channels(); ++ch) out.at(u * side + v, ch) = frame.data.at(r * frame.grid_w + c, ch);
    }
  return out;
}

// ---- registration ----------------------------------------------------------

template <class Real>
RegistrationResult<Real> run_registration(const hsfa::HsfaModel<Real>& model, const FeatureMap<Real>& frame,
                                          std::span<const FeatureMap<Real>> refs, const RegistrationConfig& cfg,
                                          const Mat<Real>* text_embedding) {
  RegistrationResult<Real> out;
  auto fwd = hsfa_forward(model, frame, refs, text_embedding);
  out.heatmap = fwd.heatmap;

  const auto mask = prompts::binarize(out.heatmap.values, cfg.heatmap_threshold);
  try {
    out.prompt_set = prompts::extract_prompts(mask);
  } catch (const prompts::EmptyRoiError&) {
    out.ok = false;
    return out;
  }

  const auto token_mask = heatmap_token_mask(out.heatmap, frame.grid_h, frame.grid_w, cfg.heatmap_threshold);
  const int sr = out.heatmap.height() / frame.grid_h;
  const int sc = out.heatmap.width() / frame.grid_w;
  const double center_r = out.prompt_set.center.row / sr;
  const double center_c = out.prompt_set.center.col / sc;
  out.window_r0 = static_cast<int>(std::lround(center_r - (cfg.crop_grid - 1) / 2.0));
  out.window_c0 = static_cast<int>(std::lround(center_c - (cfg.crop_grid - 1) / 2.0));

  out.crop.data = extract_masked_window(frame, token_mask, out.window_r0, out.window_c0, cfg.crop_grid);
  out.crop.source_frame = cfg.frame_index;
  out.crop.object_id = cfg.object_id;
  out.ok = true;
  return out;
}

// ---- scenario scripts ------------------------------------------------------

namespace {

std::string kind_name(FrameEventKind k) {
  switch (k) {
    case FrameEventKind::Normal: return "normal";
    case FrameEventKind::Occluded: return "occluded";
    case FrameEventKind::Dropped: return "dropped";
  }
  return "?";
}

FrameEventKind kind_from_name(const std::string& s) {
  if (s == "normal") return FrameEventKind::Normal;
  if (s == "occluded") return FrameEventKind::Occluded;
  if (s == "dropped") return FrameEventKind::Dropped;
  throw std::invalid_argument("scenario: unknown frame event '" + s + "'");
}

}  // namespace

void ScenarioScript::validate() const {
  if (frames.empty()) throw std::invalid_argument("scenario: no frames");
  const bool file_backed = !feature_files.empty();
  if (file_backed) {
    if (feature_files.size() != frames.size())
      throw std::invalid_argument("scenario: feature_files must match frame count");
    if (reference_files.empty()) throw std::invalid_argument("scenario: file-backed scenario needs reference_files");
  } else {
    if (objects.empty()) throw std::invalid_argument("scenario: no objects");
    for (const auto& o : objects)
      if (o.positions.size() != frames.size())
        throw std::invalid_argument("scenario: object trajectory length must match frame count");
  }
  bool saw_normal = false;
  for (const auto& f : frames) {
    if (f.kind == FrameEventKind::Normal) saw_normal = true;
    else if (!saw_normal)
      throw std::invalid_argument("scenario: needs at least one normal frame before any failure event");
    if (f.kind == FrameEventKind::Occluded) {
      const auto [r0, c0, h, w] = f.region;
      if (r0 < 0 || c0 < 0 || h < 1 || w < 1 || r0 + h > grid_h || c0 + w > grid_w)
        throw std::invalid_argument("scenario: occlusion region outside the grid");
    }
  }
}

ScenarioScript ScenarioScript::from_json(const std::string& text) {
  const json j = json::parse(text);
  ScenarioScript s;
  s.grid_h = j.value("grid_h", s.grid_h);
  s.grid_w = j.value("grid_w", s.grid_w);
  s.channels = j.value("channels", s.channels);
  s.object_grid = j.value("object_grid", s.object_grid);
  s.reference_views = j.value("reference_views", s.reference_views);
  s.world_seed = j.value("world_seed", s.world_seed);
  s.noise_seed = j.value("noise_seed", s.noise_seed);
  if (j.contains("objects"))
    for (const auto& jo : j.at("objects")) {
      ObjectTrack o;
      o.archetype = jo.at("archetype").get<int>();
      for (const auto& p : jo.at("positions")) o.positions.push_back({p.at(0).get<int>(), p.at(1).get<int>()});
      s.objects.push_back(std::move(o));
    }
  for (const auto& jf : j.at("frames")) {
    FrameEvent e;
    e.kind = kind_from_name(jf.at("event").get<std::string>());
    if (jf.contains("region")) {
      const auto& r = jf.at("region");
      e.region = {r.at(0).get<int>(), r.at(1).get<int>(), r.at(2).get<int>(), r.at(3).get<int>()};
    }
    s.frames.push_back(e);
  }
  if (j.contains("feature_files")) s.feature_files = j.at("feature_files").get<std::vector<std::string>>();
  if (j.contains("reference_files")) s.reference_files = j.at("reference_files").get<std::vector<std::string>>();
  s.validate();
  return s;
}

ScenarioScript ScenarioScript::from_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open scenario: " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return from_json(ss.str());
}

std::string ScenarioScript::to_json() const {
  json j;
  j["grid_h"] = grid_h;
  j["grid_w"] = grid_w;
  j["channels"] = channels;
  j["object_grid"] = object_grid;
  j["reference_views"] = reference_views;
  j["world_seed"] = world_seed;
  j["noise_seed"] = noise_seed;
  j["objects"] = json::array();
  for (const auto& o : objects) {
    json jo;
    jo["archetype"] = o.archetype;
    jo["positions"] = json::array();
    for (const auto& p : o.positions) jo["positions"].push_back({p[0], p[1]});
    j["objects"].push_back(jo);
  }
  j["frames"] = json::array();
  for (const auto& f : frames) {
    json jf;
    jf["event"] = kind_name(f.kind);
    if (f.kind == FrameEventKind::Occluded) jf["region"] = {f.region[0], f.region[1], f.region[2], f.region[3]};
    j["frames"].push_back(jf);
  }
  if (!feature_files.empty()) j["feature_files"] = feature_files;
  if (!reference_files.empty()) j["reference_files"] = reference_files;
  return j.dump(2);
}

// ---- providers --------------------------------------------------------------

template <class Real>
SyntheticScenarioProvider<Real>::SyntheticScenarioProvider(const ScenarioScript& script, SceneConfig base)
    : script_(script) {
  script_.validate();
  if (!script_.feature_files.empty())
    throw std::invalid_argument("SyntheticScenarioProvider: scenario is file-backed");
  base.grid_h = script_.grid_h;
  base.grid_w = script_.grid_w;
  base.channels = script_.channels;
  base.object_grid = script_.object_grid;
  base.world_seed = script_.world_seed;
  base.archetype_count = std::max(base.archetype_count, 2);
  for (const auto& o : script_.objects) base.archetype_count = std::max(base.archetype_count, o.archetype + 1);
  world_ = std::make_unique<SyntheticWorld<Real>>(base);
  for (std::size_t i = 0; i < script_.objects.size(); ++i) {
    Rng rng(Rng::derive(script_.noise_seed, 0x56494557ull + i));
    object_views_.push_back(tom::random_direction(rng));
  }
  refs_ = world_->reference_views(script_.objects.front().archetype, script_.reference_views, script_.world_seed);
}

template <class Real>
int SyntheticScenarioProvider<Real>::frame_count() const {
  return static_cast<int>(script_.frames.size());
}

template <class Real>
FeatureMap<Real> SyntheticScenarioProvider<Real>::frame(int index) {
  if (index < 0 || index >= frame_count()) throw std::invalid_argument("frame index out of range");
  Rng rng(Rng::derive(script_.noise_seed, 0x4652414dull + static_cast<std::uint64_t>(index)));
  FeatureMap<Real> fm = world_->make_background(rng);
  const auto& cfg = world_->config();
  for (std::size_t j = 0; j < script_.objects.size(); ++j) {
    const auto& o = script_.objects[j];
    const auto [r0, c0] = o.positions[static_cast<std::size_t>(index)];
    if (r0 < 0 || c0 < 0 || r0 + cfg.object_grid > cfg.grid_h || c0 + cfg.object_grid > cfg.grid_w)
      throw std::invalid_argument("scenario: object placement outside the grid");
    paste_block(fm.data, world_->library().sample(o.archetype, object_views_[j], rng), r0, c0, cfg.grid_w,
                cfg.object_grid, cfg.channels);
  }
  const auto& ev = script_.frames[static_cast<std::size_t>(index)];
  if (ev.kind == FrameEventKind::Occluded) {
    const auto [r0, c0, h, w] = ev.region;
    for (int r = r0; r < r0 + h; ++r)
      for (int c = c0; c < c0 + w; ++c)
        for (int ch = 0; ch < cfg.channels; ++ch) fm.data.at(r * cfg.grid_w + c, ch) = Real(0);
  }
  return fm;
}

template <class Real>
const std::vector<FeatureMap<Real>>& SyntheticScenarioProvider<Real>::references() {
  return refs_;
}

template <class Real>
FileBackedProvider<Real>::FileBackedProvider(const ScenarioScript& script) : script_(script) {
  script_.validate();
  if (script_.feature_files.empty()) throw std::invalid_argument("FileBackedProvider: scenario lists no feature files");
}

template <class Real>
int FileBackedProvider<Real>::frame_count() const {
  return static_cast<int>(script_.frames.size());
}

template <class Real>
FeatureMap<Real> FileBackedProvider<Real>::frame(int index) {
  const auto fm = io::load_feature_map(script_.feature_files.at(static_cast<std::size_t>(index)));
  return FeatureMap<Real>(fm.data.template cast<Real>(), fm.grid_h, fm.grid_w);
}

template <class Real>
const std::vector<FeatureMap<Real>>& FileBackedProvider<Real>::references() {
  if (!refs_loaded_) {
    for (const auto& path : script_.reference_files) {
      const auto fm = io::load_feature_map(path);
      refs_.emplace_back(fm.data.template cast<Real>(), fm.grid_h, fm.grid_w);
    }
    refs_loaded_ = true;
  }
  return refs_;
}

// ---- tracking loop -----------------------------------------------------------

namespace {

double window_overlap(int r0, int c0, int r1, int c1, int side) {
  const int rr = std::max(0, std::min(r0 + side, r1 + side) - std::max(r0, r1));
  const int cc = std::max(0, std::min(c0 + side, c1 + side) - std::max(c0, c1));
  const double inter = static_cast<double>(rr) * cc;
  const double uni = 2.0 * side * side - inter;
  return uni > 0 ? inter / uni : 0.0;
}

}  // namespace

std::string TrackRunResult::to_jsonl() const {
  std::string out;
  for (const auto& l : logs) {
    json j;
    j["frame"] = l.frame;
    j["event"] = l.event;
    j["action"] = l.action;
    j["score"] = l.score;
    j["state"] = l.state;
    j["decision"] = l.decision;
    j["window_iou"] = l.window_iou;
    j["window"] = {l.window_r0, l.window_c0};
    out += j.dump();
    out += '\n';
  }
  return out;
}

template <class Real>
TrackRunResult run_tracking(FeatureProvider<Real>& provider, const hsfa::HsfaModel<Real>& som,
                            const tom::TomModel<Real>& tom_model, const ScenarioScript& script,
                            const TrackOptions& opts) {
  TrackRunResult result;
  std::optional<tom::TrackSession<Real>> session;
  int win_r0 = 0, win_c0 = 0;

  RegistrationConfig reg_cfg;
  reg_cfg.heatmap_threshold = opts.heatmap_threshold;
  reg_cfg.crop_grid = opts.crop_grid;

  const bool has_truth = !script.objects.empty();

  for (int i = 0; i < provider.frame_count(); ++i) {
    const auto& ev = script.frames[static_cast<std::size_t>(i)];
    FrameLog log;
    log.frame = i;
    log.event = kind_name(ev.kind);

    const auto truth_iou = [&](int r0, int c0) {
      if (!has_truth) return -1.0;
      const auto [tr, tc] = script.objects.front().positions[static_cast<std::size_t>(i)];
      return window_overlap(r0, c0, tr, tc, opts.crop_grid);
    };

    if (ev.kind == FrameEventKind::Dropped) {
      log.action = "dropped";
      log.state = session ? tom::to_string(session->state()) : "Unregistered";
      result.logs.push_back(log);
      continue;
    }

    const FeatureMap<Real> fm = provider.frame(i);
    reg_cfg.frame_index = i;

    const auto attempt_registration = [&]() -> std::optional<RegistrationResult<Real>> {
      auto reg = run_registration(som, fm, std::span<const FeatureMap<Real>>(provider.references()), reg_cfg);
      if (!reg.ok) return std::nullopt;
      return reg;
    };

    if (!session) {
      if (auto reg = attempt_registration()) {
        session.emplace(std::move(reg->crop), opts.pool_capacity, opts.tom_threshold);
        win_r0 = reg->window_r0;
        win_c0 = reg->window_c0;
        log.action = "register";
      } else {
        log.action = "register_failed";
        ++result.registration_failures;
      }
      log.state = session ? tom::to_string(session->state()) : "Unregistered";
      log.window_iou = session ? truth_iou(win_r0, win_c0) : -1.0;
      log.window_r0 = win_r0;
      log.window_c0 = win_c0;
      result.logs.push_back(log);
      continue;
    }

    if (session->state() == tom::TrackState::Lost) {
      // A previous frame's re-registration attempt failed; keep retrying.
      if (auto reg = attempt_registration()) {
        session->re_register(std::move(reg->crop));
        win_r0 = reg->window_r0;
        win_c0 = reg->window_c0;
        log.action = "re_register";
        ++result.reregistrations;
      } else {
        log.action = "register_failed";
        ++result.registration_failures;
      }
      log.state = tom::to_string(session->state());
      log.window_iou = truth_iou(win_r0, win_c0);
      log.window_r0 = win_r0;
      log.window_c0 = win_c0;
      result.logs.push_back(log);
      continue;
    }

    tom::CropFeature<Real> crop;
    crop.data = extract_window(fm, win_r0, win_c0, opts.crop_grid);
    crop.source_frame = i;
    const auto decision = session->step(tom_model, crop);
    log.action = "step";
    log.score = session->score_history().back();
    log.decision = tom::to_string(decision);

    if (decision == tom::TrackDecision::ReRegister) {
      if (auto reg = attempt_registration()) {
        session->re_register(std::move(reg->crop));
        win_r0 = reg->window_r0;
        win_c0 = reg->window_c0;
        ++result.reregistrations;
      } else {
        ++result.registration_failures;
      }
    }
    log.state = tom::to_string(session->state());
    log.window_iou = truth_iou(win_r0, win_c0);
    log.window_r0 = win_r0;
    log.window_c0 = win_c0;
    result.logs.push_back(log);
  }
  return result;
}

// ---- toy segmentation training -----------------------------------------------

namespace {

template <class Real>
Mat<Real> mask_to_target(const prompts::BinaryMask& mask, int scale) {
  Mat<Real> t(mask.rows * scale, mask.cols * scale);
  for (int r = 0; r < t.rows; ++r)
    for (int c = 0; c < t.cols; ++c) t.at(r, c) = mask.at(r / scale, c / scale) ? Real(1) : Real(0);
  return t;
}

double heatmap_iou(const prompts::BinaryMask& pred, const prompts::BinaryMask& gt) {
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const bool a = pred.data[i] != 0, b = gt.data[i] != 0;
    inter += (a && b) ? 1 : 0;
    uni += (a || b) ? 1 : 0;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace

template <class Real>
double evaluate_som_iou(const hsfa::HsfaModel<Real>& model, const SomTaskConfig& task, std::uint64_t seed,
                        int episodes) {
  SyntheticWorld<Real> world(task.scene);
  Rng rng(Rng::derive(seed, 0x45564c53ull));
  double total = 0;
  for (int e = 0; e < episodes; ++e) {
    const Scene<Real> scene = world.make_scene(rng);
    const auto refs = world.reference_views(scene.target_archetype, task.reference_views,
                                            Rng::derive(seed, 0x52454600ull + static_cast<std::uint64_t>(e)));
    Mat<Real> text;
    const Mat<Real>* text_ptr = nullptr;
    if (task.use_text) {
      text = world.text_embedding(scene.target_archetype);
      text_ptr = &text;
    }
    const auto fwd = hsfa_forward(model, scene.features, std::span<const FeatureMap<Real>>(refs), text_ptr);
    const auto pred = prompts::binarize(fwd.heatmap.values, 0.5);
    prompts::BinaryMask gt(pred.rows, pred.cols);
    const Mat<Real> target = mask_to_target<Real>(scene.gt_mask, model.upsample_scale);
    for (std::size_t i = 0; i < gt.data.size(); ++i) gt.data[i] = target.data[i] != Real(0) ? 1 : 0;
    total += heatmap_iou(pred, gt);
  }
  return total / episodes;
}

template <class Real>
SomTrainOutcome train_som(hsfa::HsfaModel<Real>& model, const SomTaskConfig& task, const optim::TrainConfig& cfg,
                          double target_iou, int eval_every, int eval_episodes) {
  SyntheticWorld<Real> world(task.scene);
  const loss::LossPreset preset = loss::LossPreset::by_name(cfg.loss_preset);
  Rng episode_rng(Rng::derive(task.data_seed, 0x45505321ull));

  SomTrainOutcome outcome;

  auto step_fn = [&](int step, Rng& /*unused*/, std::vector<Mat<Real>>& grads) -> double {
    double total_loss = 0;
    for (int b = 0; b < cfg.batch; ++b) {
      const Scene<Real> scene = world.make_scene(episode_rng);
      const auto refs = world.reference_views(
          scene.target_archetype, task.reference_views,
          Rng::derive(task.data_seed, 0x52000000ull + static_cast<std::uint64_t>(step) * 64 + b));
      Mat<Real> text;
      const Mat<Real>* text_ptr = nullptr;
      if (task.use_text) {
        text = world.text_embedding(scene.target_archetype);
        text_ptr = &text;
      }
      auto fwd = hsfa_forward(model, scene.features, std::span<const FeatureMap<Real>>(refs), text_ptr);
      const Mat<Real> target = mask_to_target<Real>(scene.gt_mask, model.upsample_scale);
      const auto vg = loss::preset_loss(fwd.heatmap.values, target, preset);
      total_loss += vg.value;

      Mat<Real> upstream(vg.grad.rows * vg.grad.cols, 1);
      for (int r = 0; r < vg.grad.rows; ++r)
        for (int c = 0; c < vg.grad.cols; ++c) upstream.at(r * vg.grad.cols + c, 0) = vg.grad.at(r, c);
      fwd.tape.backward(fwd.heatmap_node, upstream);
      const auto pg = fwd.binding.grads(fwd.tape);
      for (std::size_t k = 0; k < grads.size(); ++k) grads[k] += pg[k];
    }
    return total_loss;
  };

  const std::uint64_t eval_seed = Rng::derive(task.data_seed, 0x4556414cull);
  auto stop = [&](int step, const optim::TrainResult&) -> bool {
    if (target_iou <= 0 || (step + 1) % eval_every != 0) return false;
    const double iou = evaluate_som_iou(model, task, eval_seed, eval_episodes);
    if (iou >= target_iou) {
      outcome.steps_to_target = step + 1;
      return true;
    }
    return false;
  };

  outcome.trace = optim::fit<Real>(model.parameters(), step_fn, cfg, stop);
  outcome.final_iou = evaluate_som_iou(model, task, eval_seed, eval_episodes);
  return outcome;
}

// ---- explicit instantiations --------------------------------------------------

template class SyntheticWorld<float>;
template class SyntheticWorld<double>;
template class SyntheticScenarioProvider<float>;
template class FileBackedProvider<float>;

template prompts::BinaryMask heatmap_token_mask<float>(const hsfa::RoiHeatmap<float>&, int, int, double);
template prompts::BinaryMask heatmap_token_mask<double>(const hsfa::RoiHeatmap<double>&, int, int, double);
template Mat<float> extract_window<float>(const FeatureMap<float>&, int, int, int);
template Mat<double> extract_window<double>(const FeatureMap<double>&, int, int, int);
template Mat<float> extract_masked_window<float>(const FeatureMap<float>&, const prompts::BinaryMask&, int, int, int);
template Mat<double> extract_masked_window<double>(const FeatureMap<double>&, const prompts::BinaryMask&, int, int, int);

template RegistrationResult<float> run_registration<float>(const hsfa::HsfaModel<float>&, const FeatureMap<float>&,
                                                            std::span<const FeatureMap<float>>,
                                                            const RegistrationConfig&, const Mat<float>*);
template RegistrationResult<double> run_registration<double>(const hsfa::HsfaModel<double>&, const FeatureMap<double>&,
                                                              std::span<const FeatureMap<double>>,
                                                              const RegistrationConfig&, const Mat<double>*);

template TrackRunResult run_tracking<float>(FeatureProvider<float>&, const hsfa::HsfaModel<float>&,
                                            const tom::TomModel<float>&, const ScenarioScript&, const TrackOptions&);

template SomTrainOutcome train_som<float>(hsfa::HsfaModel<float>&, const SomTaskConfig&, const optim::TrainConfig&,
                                          double, int, int);
template double evaluate_som_iou<float>(const hsfa::HsfaModel<float>&, const SomTaskConfig&, std::uint64_t, int);

}  // namespace storm::pipeline
