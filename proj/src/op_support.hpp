#pragma once

#include <functional>
#include <memory>
#include <string_view>
#include <vector>

#include "downscale/tensor.hpp"

namespace downscale {

inline void record_node(std::string_view op, std::vector<std::shared_ptr<detail::TensorImpl>> inputs,
                        std::shared_ptr<detail::TensorImpl> output, std::function<void()> backward) {
  GradientTape::active()->record(TapeNode{op, std::move(inputs), std::move(output), std::move(backward)});
}

}  // namespace downscale
