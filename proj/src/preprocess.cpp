#include "salfau/data.hpp"
#include "salfau/errors.hpp"
#include "salfau/nn.hpp"
#include "storage_util.hpp"

namespace salfau {

namespace {

Tensor as_batch(const Tensor& chw) {
  if (chw.rank() != 3) throw ShapeError("expected [C,H,W], got " + shape_to_string(chw.shape()));
  return Tensor::from_storage({1, chw.dim(0), chw.dim(1), chw.dim(2)}, chw.storage());
}

Tensor drop_batch(const Tensor& nchw) {
  return Tensor::from_storage({nchw.dim(1), nchw.dim(2), nchw.dim(3)}, nchw.storage());
}

Tensor crop_flip(const Tensor& chw, std::size_t top, std::size_t left, std::size_t size, bool flip) {
  const std::size_t C = chw.dim(0), H = chw.dim(1), W = chw.dim(2);
  if (top + size > H || left + size > W) throw ShapeError("crop window outside the image");
  return detail::dispatch(chw.precision(), [&](auto tag) {
    using T = decltype(tag);
    auto in = chw.data<T>();
    std::vector<T> out(C * size * size);
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t i = 0; i < size; ++i) {
        const T* src = in.data() + (c * H + top + i) * W + left;
        T* dst = out.data() + (c * size + i) * size;
        for (std::size_t j = 0; j < size; ++j) dst[j] = src[flip ? size - 1 - j : j];
      }
    }
    return Tensor::from_storage({C, size, size}, Storage(std::move(out)));
  });
}

}  // namespace

Tensor resize_image(const Tensor& chw, std::size_t height, std::size_t width) {
  if (chw.dim(1) == height && chw.dim(2) == width) return chw.detach();
  NoGradGuard no_grad;
  return drop_batch(upsample_bilinear(as_batch(chw.detach()), height, width));
}

Tensor stack_batch(std::span<const Tensor> items) {
  if (items.empty()) throw ContractError("stack_batch: no items");
  const Shape& s = items[0].shape();
  Shape out_shape{items.size()};
  out_shape.insert(out_shape.end(), s.begin(), s.end());
  return detail::dispatch(items[0].precision(), [&](auto tag) {
    using T = decltype(tag);
    std::vector<T> out;
    out.reserve(shape_numel(out_shape));
    for (const Tensor& t : items) {
      if (t.shape() != s) throw ShapeError("stack_batch: items differ in shape");
      auto d = t.data<T>();
      out.insert(out.end(), d.begin(), d.end());
    }
    return Tensor::from_storage(out_shape, Storage(std::move(out)));
  });
}

std::size_t train_resize_size(std::size_t crop) { return (10 * crop + 8) / 9; }

TrainTransform draw_train_transform(std::size_t crop, std::mt19937_64& rng) {
  TrainTransform t;
  t.resize = train_resize_size(crop);
  std::uniform_int_distribution<std::size_t> offset(0, t.resize - crop);
  t.top = offset(rng);
  t.left = offset(rng);
  t.flip = std::bernoulli_distribution(0.5)(rng);
  return t;
}

Sample apply_train_transform(const Sample& sample, const TrainTransform& transform,
                             std::size_t crop) {
  auto geometry = [&](const Tensor& x) {
    return crop_flip(resize_image(x, transform.resize, transform.resize), transform.top,
                     transform.left, crop, transform.flip);
  };
  return {geometry(sample.image), geometry(sample.mask), sample.name};
}

Sample preprocess_train(const Sample& sample, std::size_t crop, std::mt19937_64& rng) {
  return apply_train_transform(sample, draw_train_transform(crop, rng), crop);
}

TestInput preprocess_test(const Tensor& image, std::size_t target) {
  if (image.rank() != 3) throw ShapeError("preprocess_test: expected [C,H,W], got " + shape_to_string(image.shape()));
  TestInput in;
  in.original_height = image.dim(1);
  in.original_width = image.dim(2);
  in.image = as_batch(resize_image(image, target, target));
  return in;
}

Tensor restore_size(const Tensor& map, std::size_t height, std::size_t width) {
  detail::require_rank4(map, "restore_size");
  if (map.dim(2) == height && map.dim(3) == width) return map.detach();
  NoGradGuard no_grad;
  return upsample_bilinear(map.detach(), height, width);
}

}  // namespace salfau
