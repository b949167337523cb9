#pragma once

#include <cstddef>
#include <vector>

#include "litmas/tensor.hpp"

namespace litmas {

/// Per-modality bonafide prototypes in embedding space, stored unnormalized.
struct CenterBank {
  std::vector<Tensor> centers;  // one rank-1 tensor of length d per modality
  std::size_t epoch = 0;

  std::size_t size() const noexcept { return centers.size(); }
  friend bool operator==(const CenterBank&, const CenterBank&) = default;
};

}  // namespace litmas
