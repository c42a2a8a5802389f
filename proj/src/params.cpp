#include "dlgm/params.hpp"

namespace dlgm {

void ParamSet::add(const std::string& name, Matrix value) {
  if (contains(name)) throw Error("duplicate parameter block: " + name);
  index_[name] = entries_.size();
  entries_.push_back({name, std::move(value)});
}

Matrix& ParamSet::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error("unknown parameter block: " + name);
  return entries_[it->second].value;
}

const Matrix& ParamSet::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error("unknown parameter block: " + name);
  return entries_[it->second].value;
}

std::size_t ParamSet::total_size() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

ParamSet ParamSet::zeros_like() const {
  ParamSet z;
  for (const auto& e : entries_) z.add(e.name, Matrix(e.value.rows(), e.value.cols()));
  return z;
}

bool ParamSet::same_layout(const ParamSet& o) const {
  if (entries_.size() != o.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name != o.entries_[i].name) return false;
    if (!entries_[i].value.same_shape(o.entries_[i].value)) return false;
  }
  return true;
}

void ParamSet::axpy(double alpha, const ParamSet& other) {
  for (const auto& e : other.entries_) {
    Matrix& dst = at(e.name);
    require_dims(dst.same_shape(e.value), "ParamSet::axpy block " + e.name);
    dlgm::axpy(alpha, e.value.data(), dst.data());
  }
}

void ParamSet::scale(double s) {
  for (auto& e : entries_)
    for (double& x : e.value.data()) x *= s;
}

double ParamSet::squared_norm() const {
  double s = 0.0;
  for (const auto& e : entries_) s += dlgm::squared_norm(e.value.data());
  return s;
}

void ParamSet::merge(const ParamSet& other) {
  for (const auto& e : other.entries_) add(e.name, e.value);
}

Vector ParamSet::flatten() const {
  Vector flat;
  flat.reserve(total_size());
  for (const auto& e : entries_) flat.insert(flat.end(), e.value.data().begin(), e.value.data().end());
  return flat;
}

void ParamSet::assign_flat(const Vector& flat) {
  require_dims(flat.size() == total_size(), "ParamSet::assign_flat");
  std::size_t k = 0;
  for (auto& e : entries_)
    for (double& x : e.value.data()) x = flat[k++];
}

}  // namespace dlgm
