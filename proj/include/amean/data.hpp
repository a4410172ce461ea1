// Synthetic blended-target datasets.
//
// A source domain of m Gaussian class clusters and k hidden sub-targets, each
// the source pushed through an affine transform with optional class-dependent
// offsets (so a class in one sub-target can land near a different class of
// another — the category-misalignment regime). Target class and sub-target
// labels are hidden behind views: the trainer-facing view carries none of
// them, the evaluation view carries all.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "amean/common.hpp"

namespace amean {

struct DomainTransformSpec {
  double rotation = 0.0;            // radians, applied in the first two dims
  std::vector<double> translation;  // length d; empty means zeros
  std::vector<double> scale;        // length d, all nonzero; empty means ones
  double label_offset = 0.0;        // class-conditional shift strength
  double noise_std = 0.0;
};

struct DataSpec {
  int d = 2;
  int m = 4;
  int k = 2;
  int n_source = 600;
  int n_target = 600;
  double cluster_std = 1.0;
  double center_box = 10.0;        // class centers drawn uniform in [-box, box]^d
  std::vector<double> pi;          // sub-target mixture, length k; empty = uniform
  std::vector<DomainTransformSpec> transforms;  // length k
};

// ConfigError on any violated field contract (dims, simplex, scales, sizes).
void validate_data_spec(const DataSpec& spec);

// The k = 2 category-misalignment task the end-to-end comparisons run on:
// one near-identity sub-target and one rotated, shifted sub-target whose
// class clusters are pulled toward the wrong source classes.
DataSpec default_task_spec();
// Same construction at d = 16 with four sub-targets.
DataSpec harder_task_spec();

enum class Split { kTrain, kTest };

// Everything training may legally see: labeled source, unlabeled target.
struct TrainerView {
  int d = 0;
  int m = 0;
  Mat source_x;
  std::vector<int> source_y;  // 0-based class labels
  Mat target_x;               // train-split target rows, unlabeled
};

// Hidden-field access for metrics and diagnostics only.
struct EvalView {
  Mat x;
  std::vector<int> label;          // 0-based class
  std::vector<int> subtarget;      // 0-based sub-target
  std::vector<int> dataset_index;  // row position in the full target table
};

class BlendedDataset {
 public:
  int d = 0;
  int m = 0;
  int k = 0;
  std::vector<double> pi;  // empirical sub-target proportions over all targets
  Mat source_x;
  std::vector<int> source_y;

  int n_target() const { return target_x_.rows; }
  TrainerView trainer_view() const;
  EvalView eval_view(Split split) const;

 private:
  friend BlendedDataset generate_blended(const DataSpec& spec, uint64_t seed);
  friend void save_dataset(const BlendedDataset& ds, const std::string& path);
  friend BlendedDataset load_dataset(const std::string& path);

  Mat target_x_;
  std::vector<int> target_y_;        // hidden class, 0-based
  std::vector<int> target_sub_;      // hidden sub-target, 0-based
  std::vector<uint8_t> target_test_;  // 1 = test split
};

// Deterministic per (spec, seed). GenerationError when class centers cannot
// reach the required minimum separation (4x cluster std) in 100 attempts.
BlendedDataset generate_blended(const DataSpec& spec, uint64_t seed);

// CSV with header role,split,x_1..x_d,class,subtarget. Classes are 0-based;
// sub-targets are written 1-based for target rows and 0 for source rows.
// Values carry 17 significant digits, so a round-trip is value-exact.
void save_dataset(const BlendedDataset& ds, const std::string& path);
BlendedDataset load_dataset(const std::string& path);

// n x m one-hot encoding; DomainError on a label outside [0, m).
Mat one_hot(const std::vector<int>& labels, int m);

}  // namespace amean
