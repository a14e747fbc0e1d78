// Encoder-decoder building blocks shared by the denoiser and aperture nets.
#pragma once

#include <random>
#include <string>
#include <vector>

#include "rawsim/layers.hpp"

namespace rawsim::nn {

// Two 3x3 convolutions, each followed by ReLU.
struct ConvBlock {
  Conv2d c1, c2;
  ReLU r1, r2;

  ConvBlock() = default;
  ConvBlock(const std::string& name, int cin, int cout)
      : c1(name + ".c1", cin, cout, 3), c2(name + ".c2", cout, cout, 3) {}

  void init_random(std::mt19937_64& rng) {
    c1.init_random(rng);
    c2.init_random(rng);
  }
  Tensor forward(const Tensor& x) { return r2.forward(c2.forward(r1.forward(c1.forward(x)))); }
  Tensor backward(const Tensor& gy) {
    return c1.backward(r1.backward(c2.backward(r2.backward(gy))));
  }
  void collect(std::vector<Parameter*>& out) {
    out.push_back(&c1.weight);
    out.push_back(&c1.bias);
    out.push_back(&c2.weight);
    out.push_back(&c2.bias);
  }
};

// Stride-2 3x3 convolution + ReLU.
struct DownBlock {
  Conv2d c;
  ReLU r;

  DownBlock() = default;
  DownBlock(const std::string& name, int cin, int cout) : c(name + ".c", cin, cout, 3, 2, 1) {}

  void init_random(std::mt19937_64& rng) { c.init_random(rng); }
  Tensor forward(const Tensor& x) { return r.forward(c.forward(x)); }
  Tensor backward(const Tensor& gy) { return c.backward(r.backward(gy)); }
  void collect(std::vector<Parameter*>& out) {
    out.push_back(&c.weight);
    out.push_back(&c.bias);
  }
};

// Bilinear upsampling to an explicit target size + 3x3 convolution + ReLU.
struct UpBlock {
  Resample up{ResampleMode::bilinear};
  Conv2d c;
  ReLU r;

  UpBlock() = default;
  UpBlock(const std::string& name, int cin, int cout) : c(name + ".c", cin, cout, 3) {}

  void init_random(std::mt19937_64& rng) { c.init_random(rng); }
  Tensor forward(const Tensor& x, int target_h, int target_w) {
    return r.forward(c.forward(up.forward(x, target_h, target_w)));
  }
  Tensor backward(const Tensor& gy) { return up.backward(c.backward(r.backward(gy))); }
  void collect(std::vector<Parameter*>& out) {
    out.push_back(&c.weight);
    out.push_back(&c.bias);
  }
};

}  // namespace rawsim::nn
