#pragma once

#include "dfkan/tensor.hpp"

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace dfkan {

struct Provenance {
  std::string generator;
  std::uint64_t seed = 0;
  double noise = 0.0;
  long long n = 0;
  // Free-form facts (ranges, reconstructions, scaling applied).
  std::map<std::string, std::string> notes;
};

struct Dataset {
  Tensor X;  // N x d
  Tensor y;  // N x 1
  std::vector<std::string> names;
  Provenance provenance;

  long long size() const { return X.rows(); }
  int features() const { return static_cast<int>(X.cols()); }
  void validate() const;
};

// Every generator draws features from one RNG stream and noise from another,
// so the clean target depends only on (N, seed). `noise` is the absolute
// standard deviation of additive Gaussian noise.
Dataset gen_friedman1(long long n, double noise, std::uint64_t seed);
Dataset gen_friedman2(long long n, double noise, std::uint64_t seed);
Dataset gen_feynman_I_18_12(long long n, double noise, std::uint64_t seed);
Dataset gen_feynman_II_6_11(long long n, double noise, std::uint64_t seed);
Dataset gen_damped_oscillator(long long n, double noise, std::uint64_t seed);
Dataset gen_compositional(const std::string& kind, long long n, double noise, std::uint64_t seed);

// Closed-form targets, shared by the generators and their tests.
double friedman1_target(std::span<const double> x);
double friedman2_target(std::span<const double> x);
double feynman_I_18_12_target(std::span<const double> x);
double feynman_II_6_11_target(std::span<const double> x);
double damped_oscillator_target(std::span<const double> x);
double compositional_target(const std::string& kind, std::span<const double> x);

std::vector<std::string> generator_names();
// Dispatch by name. With `relative_noise`, noise is multiplied by std(y_clean).
Dataset generate(const std::string& name, long long n, double noise, std::uint64_t seed,
                 bool relative_noise = false);

struct DelimitedOptions {
  std::string target;
  char delimiter = ',';
  bool standardize = false;
};

// Header row required. Non-numeric feature columns are one-hot encoded in
// place (categories sorted); rows with empty cells are dropped.
Dataset load_delimited(const std::string& path, const DelimitedOptions& options);
void write_delimited(const std::string& path, const Dataset& data, char delimiter = ',');
void write_provenance(const std::string& path, const Dataset& data);

// Formats with 17 significant digits.
std::string format_double(double v);

}  // namespace dfkan
