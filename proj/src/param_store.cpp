#include "pinnsformer/param_store.hpp"

#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <utility>

namespace pinnsformer {

std::string format_double(double value) {
  char buffer[32];
  const auto result = std::to_chars(buffer, buffer + sizeof(buffer), value);
  return std::string(buffer, result.ptr);
}

namespace {

double parse_double(std::string_view token) {
  double value = 0.0;
  const auto result = std::from_chars(token.data(), token.data() + token.size(), value);
  if (result.ec != std::errc() || result.ptr != token.data() + token.size()) {
    throw std::runtime_error("malformed number '" + std::string(token) + "' in parameter file");
  }
  return value;
}

}  // namespace

void ParamStore::add(std::string name, Shape shape, Eigen::VectorXd values) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter " + name);
  if (shape_size(shape) != values.size()) throw IncompatibleShapes("parameter " + name + " has inconsistent shape");
  index_.emplace(name, entries_.size());
  entries_.push_back(ParamEntry{std::move(name), std::move(shape), std::move(values)});
}

bool ParamStore::contains(std::string_view name) const { return index_.count(std::string(name)) > 0; }

std::size_t ParamStore::index_of(std::string_view name) const {
  const auto it = index_.find(std::string(name));
  if (it == index_.end()) throw std::out_of_range("unknown parameter " + std::string(name));
  return it->second;
}

const ParamEntry& ParamStore::at(std::string_view name) const { return entries_[index_of(name)]; }

void ParamStore::set(std::string_view name, Eigen::VectorXd values) {
  ParamEntry& entry = entries_[index_of(name)];
  if (values.size() != entry.values.size()) throw IncompatibleShapes("parameter " + entry.name + " has the wrong size");
  entry.values = std::move(values);
}

Index ParamStore::total_size() const {
  Index total = 0;
  for (const ParamEntry& entry : entries_) total += entry.values.size();
  return total;
}

Eigen::VectorXd ParamStore::flatten() const {
  Eigen::VectorXd flat(total_size());
  Index offset = 0;
  for (const ParamEntry& entry : entries_) {
    flat.segment(offset, entry.values.size()) = entry.values;
    offset += entry.values.size();
  }
  return flat;
}

void ParamStore::assign(const Eigen::VectorXd& flat) {
  if (flat.size() != total_size()) throw IncompatibleShapes("flat parameter vector has the wrong length");
  Index offset = 0;
  for (ParamEntry& entry : entries_) {
    entry.values = flat.segment(offset, entry.values.size());
    offset += entry.values.size();
  }
}

std::vector<DiffTensor> ParamStore::bind(Graph* graph) const {
  std::vector<DiffTensor> tensors;
  tensors.reserve(entries_.size());
  for (const ParamEntry& entry : entries_) {
    DiffTensor value(entry.shape, entry.values.array());
    tensors.push_back(graph ? graph->variable(value) : value);
  }
  return tensors;
}

void ParamStore::write(std::ostream& out) const {
  for (const ParamEntry& entry : entries_) {
    out << entry.name << ' ' << entry.shape.size();
    for (Index d : entry.shape) out << ' ' << d;
    for (Index i = 0; i < entry.values.size(); ++i) out << ' ' << format_double(entry.values[i]);
    out << '\n';
  }
}

ParamStore ParamStore::read(std::istream& in) {
  ParamStore store;
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.empty() || line.front() == '#') continue;
    std::istringstream fields(line);
    std::string name;
    std::size_t rank = 0;
    if (!(fields >> name >> rank)) {
      throw std::runtime_error("parameter file line " + std::to_string(line_number) + ": missing name or rank");
    }
    Shape shape(rank);
    for (Index& d : shape) {
      if (!(fields >> d)) throw std::runtime_error("parameter file line " + std::to_string(line_number) + ": bad shape");
    }
    Eigen::VectorXd values(shape_size(shape));
    std::string token;
    for (Index i = 0; i < values.size(); ++i) {
      if (!(fields >> token)) {
        throw std::runtime_error("parameter file line " + std::to_string(line_number) + ": too few values");
      }
      values[i] = parse_double(token);
    }
    if (fields >> token) throw std::runtime_error("parameter file line " + std::to_string(line_number) + ": extra values");
    store.add(std::move(name), std::move(shape), std::move(values));
  }
  return store;
}

bool ParamStore::operator==(const ParamStore& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const ParamEntry& a = entries_[i];
    const ParamEntry& b = other.entries_[i];
    if (a.name != b.name || a.shape != b.shape || a.values.size() != b.values.size()) return false;
    if ((a.values.array() != b.values.array()).any()) return false;
  }
  return true;
}

Eigen::VectorXd flatten(const std::vector<DiffTensor>& tensors) {
  Index total = 0;
  for (const DiffTensor& t : tensors) total += t.size();
  Eigen::VectorXd flat(total);
  Index offset = 0;
  for (const DiffTensor& t : tensors) {
    flat.segment(offset, t.size()) = t.values().matrix();
    offset += t.size();
  }
  return flat;
}

double xavier_bound(Index fan_in, Index fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

ParamInitializer::ParamInitializer(ParamStore& store, std::uint64_t seed) : store_(store), state_(seed) {}

DiffTensor ParamInitializer::param(const std::string& name, const Shape& shape, Init init) {
  const Index n = shape_size(shape);
  Eigen::VectorXd values(n);
  switch (init) {
    case Init::zeros: values.setZero(); break;
    case Init::ones: values.setOnes(); break;
    case Init::xavier: {
      if (shape.size() != 2) throw IncompatibleShapes("xavier init expects a matrix for " + name);
      // Each parameter draws from its own stream so adding a layer does not
      // reshuffle the others.
      std::mt19937_64 rng(state_ + store_.count() * 0x9E3779B97F4A7C15ULL);
      const double bound = xavier_bound(shape[1], shape[0]);
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (Index i = 0; i < n; ++i) values[i] = dist(rng);
      break;
    }
  }
  store_.add(name, shape, values);
  return DiffTensor(shape, values.array());
}

ParamBinder::ParamBinder(const ParamStore& store, Graph* graph) : store_(store), leaves_(store.bind(graph)) {}

ParamBinder::ParamBinder(const ParamStore& store, std::vector<DiffTensor> tensors)
    : store_(store), leaves_(std::move(tensors)) {
  if (leaves_.size() != store.count()) throw IncompatibleShapes("binder needs one tensor per parameter");
}

DiffTensor ParamBinder::param(const std::string& name, const Shape& shape, Init) {
  const std::size_t index = store_.index_of(name);
  if (store_.entries()[index].shape != shape) {
    throw IncompatibleShapes("parameter " + name + " has shape " + to_string(store_.entries()[index].shape) +
                             ", expected " + to_string(shape));
  }
  if (leaves_[index].shape() != shape) throw IncompatibleShapes("tensor for " + name + " has the wrong shape");
  return leaves_[index];
}

}  // namespace pinnsformer
