#include <algorithm>
#include <cctype>
#include <sstream>
#include <stdexcept>

#include "rra/heads.hpp"
#include "rra/rra_block.hpp"

namespace rra {

namespace {

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    return s;
}

} // namespace

RraVariant rra_variant_from(const std::string& name) {
    const std::string n = lower(name);
    if (n == "full") return RraVariant::full;
    if (n == "avg_pool" || n == "avgpool") return RraVariant::avg_pool;
    if (n == "spatial" || n == "spatial_attention") return RraVariant::spatial_attention;
    if (n == "no_bn" || n == "no_batchnorm") return RraVariant::no_batchnorm;
    if (n == "no_relu") return RraVariant::no_relu;
    if (n == "no_tanh") return RraVariant::no_tanh;
    if (n == "neg_relu") return RraVariant::neg_relu;
    throw std::invalid_argument("unknown block variant '" + name + "'");
}

LossSpec LossSpec::parse(const std::string& text) {
    LossSpec spec;
    spec.use_individual = false;
    std::stringstream ss(lower(text));
    std::string token;
    bool any = false;
    while (std::getline(ss, token, '+')) {
        if (token.empty()) continue;
        if (token == "lc") {
            spec.use_concat = true;
        } else if (token == "li") {
            spec.use_individual = true;
        } else if (token == "le") {
            spec.use_ensemble = true;
        } else {
            throw std::invalid_argument("unknown loss token '" + token + "'");
        }
        any = true;
    }
    if (!any) throw std::invalid_argument("empty loss specification");
    return spec;
}

} // namespace rra
