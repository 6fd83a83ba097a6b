#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "csip/skeleton_encoder.hpp"
#include "csip/visual_encoder.hpp"

namespace csip {

enum class TrackletSource { kSynthetic, kIngested };

/// One paired sample: image frames and skeleton frames with common labels.
struct Tracklet {
  ImageSequence images;
  SkeletonSequence skeletons;
  int pid = -1;
  int camid = -1;
  TrackletSource source = TrackletSource::kSynthetic;
};

struct Dataset {
  std::vector<Tracklet> train;
  std::vector<Tracklet> query;
  std::vector<Tracklet> gallery;
  std::size_t identities = 0;
  std::vector<std::string> joint_names;
};

struct DataConfig {
  std::size_t identities = 16;
  std::size_t tracklets_per_id = 8;
  /// Per identity, the last eval_tracklets_per_id tracklets are held out of
  /// train; the first goes to query, the rest to gallery.
  std::size_t eval_tracklets_per_id = 2;
  /// Identities excluded from train entirely (their held-out tracklets still
  /// populate query/gallery).
  std::size_t heldout_identities = 0;
  std::size_t frames = 4;
  std::size_t height = 32, width = 16;
  std::size_t cameras = 2;
  double image_noise = 0.03;
  double skeleton_noise = 0.01;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Deterministic synthetic paired data. Skeletons follow a parametric
/// walking model (base pose + identity-keyed sinusoidal joint offsets +
/// noise); images are coarse block rasterizations of the projected skeleton
/// colored by an identity appearance vector, with camera-keyed background
/// bias. Appearance (image only) and gait (skeleton-driven) are independent
/// identity factors.
Dataset generate_dataset(const DataConfig& cfg);

/// Per-frame JSON skeletons: directory of frame_<index>.json files, each
/// holding the named 3-D keypoints of one frame. Missing indices become
/// invalid-masked frames. See docs/FORMATS.md.
SkeletonSequence load_skeleton_json(const std::string& dir,
                                    const std::vector<std::string>& joint_names);
void save_skeleton_json(const std::string& dir, const SkeletonSequence& seq,
                        const std::vector<std::string>& joint_names);

/// Fixed linear joint regressor J = reg * V.
struct JointRegressor {
  Tensor matrix;  // J_out x V_count
  std::vector<std::string> joint_names;
};
Tensor regress_joints(const Tensor& vertices, const JointRegressor& reg);

/// Vertex lines ("v x y z") of an .obj file; everything else is skipped.
Tensor parse_obj(const std::string& path);

/// Removes frames whose skeleton is invalid or all-zero from both
/// modalities, preserving order. Errors when nothing remains.
Tracklet discard_empty_frames(const Tracklet& t);

/// On-disk dataset layout (one directory per identity, per-tracklet
/// subdirectories, raw image tensor + skeleton JSONs + manifest).
void save_dataset(const std::string& dir, const Dataset& ds);
Dataset load_dataset(const std::string& dir);

}  // namespace csip
