#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "ctap/adam.hpp"
#include "ctap/checkpoint.hpp"
#include "ctap/data_io.hpp"
#include "ctap/error.hpp"

namespace ctap {

/// Optimisation settings shared by the three trainers.
struct TrainConfig {
  std::size_t batch_size = 128;
  double learning_rate = 0.005;
  std::size_t epochs = 10;
  std::uint64_t seed = 0;

  void validate(const std::string& where) const {
    if (batch_size == 0) throw Error(ErrorKind::Config, where + ".batch_size: must be >= 1");
    if (!(learning_rate > 0.0)) throw Error(ErrorKind::Config, where + ".learning_rate: must be > 0");
    if (epochs == 0) throw Error(ErrorKind::Config, where + ".epochs: must be >= 1");
  }

  nn::AdamConfig adam() const {
    nn::AdamConfig cfg;
    cfg.learning_rate = learning_rate;
    return cfg;
  }
};

namespace detail {

inline void zero(nn::Tensor& t) { std::fill(t.values.begin(), t.values.end(), 0.0); }

inline void require_finite_loss(double loss, const std::string& what) {
  if (!std::isfinite(loss)) throw Error(ErrorKind::Numeric, "non-finite loss while training " + what);
}

}  // namespace detail

}  // namespace ctap

namespace ctap {

/// Pairs every parameter of `model` with the same-named tensor of `grads`.
/// Both must expose visit_params(Model&, Fn).
template <typename Model>
std::vector<nn::ParamSlot> param_slots(Model& model, const Model& grads) {
  std::vector<nn::ParamSlot> slots;
  visit_params(model, [&](const std::string& name, nn::Tensor& t) {
    slots.push_back({name, &t, nullptr});
  });
  std::size_t i = 0;
  visit_params(grads, [&](const std::string&, const nn::Tensor& t) { slots.at(i++).grad = &t; });
  return slots;
}

template <typename Model>
void zero_grads(Model& grads) {
  visit_params(grads, [](const std::string&, nn::Tensor& t) { detail::zero(t); });
}

template <typename Model>
void store_tensors(const Model& model, nn::Checkpoint& ckpt) {
  visit_params(model, [&](const std::string& name, const nn::Tensor& t) {
    ckpt.tensors.emplace_back(name, t);
  });
}

template <typename Model>
void restore_tensors(const nn::Checkpoint& ckpt, Model& model) {
  visit_params(model, [&](const std::string& name, nn::Tensor& t) {
    nn::restore_tensor(ckpt, name, t);
  });
}

inline std::size_t hyper_size(const nn::Checkpoint& ckpt, const std::string& key) {
  std::size_t v = 0;
  if (!detail::parse_number(ckpt.hyper_value(key), v)) throw DecodeError("bad hyperparameter " + key);
  return v;
}

inline double hyper_real(const nn::Checkpoint& ckpt, const std::string& key) {
  double v = 0;
  if (!detail::parse_number(ckpt.hyper_value(key), v)) throw DecodeError("bad hyperparameter " + key);
  return v;
}

inline void require_kind(const nn::Checkpoint& ckpt, const std::string& kind) {
  if (ckpt.kind != kind) {
    throw Error(ErrorKind::MissingModel, "expected a " + kind + " checkpoint, found '" + ckpt.kind + "'");
  }
}

}  // namespace ctap
