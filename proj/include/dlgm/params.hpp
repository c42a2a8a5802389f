#pragma once

#include <map>
#include <string>
#include <vector>

#include "dlgm/numcore.hpp"

namespace dlgm {

// Ordered collection of named parameter blocks. Used both for model parameter
// values and for gradients, which share keys with the values they belong to.
class ParamSet {
 public:
  struct Entry {
    std::string name;
    Matrix value;

    friend bool operator==(const Entry&, const Entry&) = default;
  };

  void add(const std::string& name, Matrix value);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  Matrix& at(const std::string& name);
  const Matrix& at(const std::string& name) const;

  std::size_t blocks() const { return entries_.size(); }
  std::size_t total_size() const;

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  // Same keys and shapes, all zero.
  ParamSet zeros_like() const;
  bool same_layout(const ParamSet& o) const;

  // this += alpha * other over the keys of other; every key must exist here.
  void axpy(double alpha, const ParamSet& other);
  void scale(double s);
  double squared_norm() const;

  // Adds other's blocks under their own names; names must be disjoint.
  void merge(const ParamSet& other);

  Vector flatten() const;
  void assign_flat(const Vector& flat);

  friend bool operator==(const ParamSet& a, const ParamSet& b) { return a.entries_ == b.entries_; }

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

// Gradients keyed by parameter name over the union of generative and
// recognition parameters.
using GradientSet = ParamSet;

}  // namespace dlgm
