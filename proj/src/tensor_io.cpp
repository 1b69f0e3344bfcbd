#include "maskfill/tensor_io.hpp"

#include <cstring>

namespace maskfill {

NamedArray to_named_array(const std::string& name, const torch::Tensor& tensor) {
    const bool f64 = tensor.scalar_type() == torch::kFloat64;
    auto t = tensor.detach().to(torch::kCPU, f64 ? torch::kFloat64 : torch::kFloat32).contiguous();
    NamedArray a;
    a.name = name;
    a.dtype = f64 ? DType::f64 : DType::f32;
    a.shape.assign(t.sizes().begin(), t.sizes().end());
    a.bytes.resize(static_cast<std::size_t>(t.numel()) * t.element_size());
    std::memcpy(a.bytes.data(), t.data_ptr(), a.bytes.size());
    return a;
}

torch::Tensor to_tensor(const NamedArray& array) {
    torch::Dtype dtype;
    switch (array.dtype) {
        case DType::f32: dtype = torch::kFloat32; break;
        case DType::f64: dtype = torch::kFloat64; break;
        case DType::i64: dtype = torch::kInt64; break;
        case DType::u8: dtype = torch::kUInt8; break;
        default: throw ArchiveError("unknown dtype for " + array.name);
    }
    auto t = torch::empty(array.shape, torch::TensorOptions().dtype(dtype));
    std::memcpy(t.data_ptr(), array.bytes.data(), array.bytes.size());
    return t;
}

torch::Tensor image_to_tensor(const Image& image) {
    auto hwc = torch::from_blob(const_cast<float*>(image.pixels.data()), {image.height, image.width, image.channels},
                                torch::kFloat32);
    return hwc.permute({2, 0, 1}).contiguous();
}

torch::Tensor images_to_batch(const std::vector<Image>& images) {
    std::vector<torch::Tensor> ts;
    ts.reserve(images.size());
    for (const auto& im : images) ts.push_back(image_to_tensor(im));
    return torch::stack(ts);
}

Image tensor_to_image(const torch::Tensor& tensor) {
    auto t = tensor.detach();
    if (t.dim() == 4) {
        TORCH_CHECK(t.size(0) == 1, "tensor_to_image expects a single image");
        t = t[0];
    }
    TORCH_CHECK(t.dim() == 3, "tensor_to_image expects [C,H,W]");
    t = t.to(torch::kFloat32).permute({1, 2, 0}).contiguous();
    Image out(static_cast<int>(t.size(0)), static_cast<int>(t.size(1)), static_cast<int>(t.size(2)));
    std::memcpy(out.pixels.data(), t.data_ptr<float>(), out.pixels.size() * sizeof(float));
    return out;
}

}  // namespace maskfill
