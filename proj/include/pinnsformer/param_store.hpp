#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "pinnsformer/tensor.hpp"

namespace pinnsformer {

struct ParamEntry {
  std::string name;
  Shape shape;
  Eigen::VectorXd values;  // row-major
};

// Flat, ordered, named parameter collection.  The order of insertion defines
// the layout of flatten()/assign() used by the optimizers.
class ParamStore {
 public:
  void add(std::string name, Shape shape, Eigen::VectorXd values);
  bool contains(std::string_view name) const;
  const ParamEntry& at(std::string_view name) const;
  void set(std::string_view name, Eigen::VectorXd values);
  std::size_t index_of(std::string_view name) const;
  const std::vector<ParamEntry>& entries() const { return entries_; }
  std::size_t count() const { return entries_.size(); }
  Index total_size() const;

  Eigen::VectorXd flatten() const;
  void assign(const Eigen::VectorXd& flat);

  // One tensor per entry, in store order.  Leaves of `graph` when given,
  // constants otherwise.
  std::vector<DiffTensor> bind(Graph* graph) const;

  // Text form: one line per entry, `name rank dims... values...`, with values
  // printed in shortest round-trip decimal form.
  void write(std::ostream& out) const;
  static ParamStore read(std::istream& in);

  bool operator==(const ParamStore& other) const;

 private:
  std::vector<ParamEntry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Shortest decimal form that reads back to the same double.
std::string format_double(double value);

// Flattens per-entry tensors (gradients, typically) into the store layout.
Eigen::VectorXd flatten(const std::vector<DiffTensor>& tensors);

enum class Init { xavier, zeros, ones };

// Where layers obtain their parameters: either freshly initialized into a
// store, or bound from an existing store for one evaluation.
class ParamSource {
 public:
  virtual ~ParamSource() = default;
  virtual DiffTensor param(const std::string& name, const Shape& shape, Init init) = 0;
};

// Xavier-uniform weights with bound sqrt(6 / (fan_in + fan_out)), zero biases,
// unit Wavelet coefficients.  Deterministic given the seed.
class ParamInitializer final : public ParamSource {
 public:
  ParamInitializer(ParamStore& store, std::uint64_t seed);
  DiffTensor param(const std::string& name, const Shape& shape, Init init) override;

 private:
  ParamStore& store_;
  std::uint64_t state_;
};

double xavier_bound(Index fan_in, Index fan_out);

class ParamBinder final : public ParamSource {
 public:
  // `graph` may be null, in which case parameters are constants.
  ParamBinder(const ParamStore& store, Graph* graph);
  // Hands out `tensors` in store order instead of fresh leaves.
  ParamBinder(const ParamStore& store, std::vector<DiffTensor> tensors);
  DiffTensor param(const std::string& name, const Shape& shape, Init init) override;
  const std::vector<DiffTensor>& leaves() const { return leaves_; }

 private:
  const ParamStore& store_;
  std::vector<DiffTensor> leaves_;
};

}  // namespace pinnsformer
