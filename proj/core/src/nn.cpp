#include "belab/nn.hpp"

namespace belab {

std::vector<float> dropout_apply(const std::vector<float>& x, double p, bool training,
                                 std::uint64_t seed) {
    if (p < 0.0 || p >= 1.0) throw UsageError("dropout probability must lie in [0,1)");
    std::vector<float> out = x;
    if (!training || p == 0.0) return out;
    Rng rng(seed);
    std::vector<std::uint8_t> mask;
    dropout_forward(out.data(), out.size(), p, rng, mask);
    return out;
}

}  // namespace belab
