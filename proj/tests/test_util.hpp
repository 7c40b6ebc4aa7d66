#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "biax/dataset.hpp"
#include "biax/model.hpp"
#include "biax/rng.hpp"
#include "biax/tensor.hpp"

namespace biax::test {

inline std::filesystem::path scratch(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("biax_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

/// Small model over 600-sample windows: [10,5,5,3] / [5,3,3,2] gives T = 5.
inline ModelConfig desk_model(std::size_t channels = 4, std::size_t dim = 16, std::size_t heads = 2) {
  ModelConfig mc;
  mc.channels = channels;
  mc.input_len = 600;
  mc.dim = dim;
  mc.heads = heads;
  mc.ff_mult = 2;
  mc.conv_stack = {{10, 5, 0}, {5, 3, 0}, {5, 3, 0}, {3, 2, 0}};
  mc.dropout = 0.0;
  mc.seed = 7;
  return mc;
}

inline Tensor random_input(Rng& rng, std::size_t B, std::size_t C, std::size_t L) {
  std::vector<double> d(B * C * L);
  for (double& v : d) v = rng.uniform(-1.0, 1.0);
  return Tensor(std::move(d), {B, C, L});
}

inline PipelineConfig chain_montage(std::size_t electrodes = 5) {
  PipelineConfig pc;
  pc.montage.clear();
  for (std::size_t i = 1; i < electrodes; ++i)
    pc.montage.emplace_back("E" + std::to_string(i), "E" + std::to_string(i + 1));
  return pc;
}

/// Synthetic cohort written to `dir`, preprocessed and cut into 600-sample
/// windows over 4 bipolar channels.
inline std::vector<PatientRecord> toy_cohort(const std::string& name, std::size_t patients = 8, double seconds = 30,
                                             std::uint64_t seed = 1) {
  CohortSpec cs;
  cs.patients = patients;
  cs.hours_per_patient = 2;
  cs.hour_seconds = seconds;
  cs.base.channels = 5;
  cs.seed = seed;
  const auto manifest = write_cohort(synth_cohort(cs), scratch(name));
  return load_cohort(manifest, chain_montage(), 600);
}

}  // namespace biax::test
