#ifndef MASKFILL_TENSOR_IO_HPP
#define MASKFILL_TENSOR_IO_HPP

#include <string>
#include <vector>

#include <torch/torch.h>

#include "maskfill/archive.hpp"
#include "maskfill/image.hpp"

namespace maskfill {

/// Stores a tensor as float32 (float64 tensors keep their precision).
NamedArray to_named_array(const std::string& name, const torch::Tensor& tensor);
torch::Tensor to_tensor(const NamedArray& array);

/// HWC image -> [C,H,W] float tensor.
torch::Tensor image_to_tensor(const Image& image);
/// Stacks same-shaped images into [N,C,H,W].
torch::Tensor images_to_batch(const std::vector<Image>& images);
/// [C,H,W] (or [1,C,H,W]) tensor -> HWC image.
Image tensor_to_image(const torch::Tensor& tensor);

}  // namespace maskfill

#endif  // MASKFILL_TENSOR_IO_HPP
