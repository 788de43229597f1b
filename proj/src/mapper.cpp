// SPDX-License-Identifier: Apache-2.0

#include "prefixbridge/mapper.hpp"

namespace pfx {

void MapperConfig::validate() const {
    if (clip_dim == 0 || d_model == 0 || n_heads == 0) {
        throw ConfigError("mapper config needs positive clip_dim, d_model and n_heads");
    }
    if (d_model % n_heads != 0) {
        throw ConfigError("mapper d_model " + std::to_string(d_model) + " is not divisible by n_heads " +
                          std::to_string(n_heads));
    }
    if (clip_length < 1 || prefix_length < 1) {
        throw ConfigError("mapper clip_length and prefix_length must be >= 1");
    }
}

std::vector<TensorSpec> mapper_manifest(const MapperConfig& config) {
    config.validate();
    const std::size_t d = config.d_model;
    const std::size_t width = config.clip_length * d;
    std::vector<TensorSpec> manifest{
        {"mapper.proj.w", {config.clip_dim, width}},
        {"mapper.proj.b", {width}, InitKind::Zeros},
        {"mapper.prefix", {config.prefix_length, d}},
    };
    for (std::size_t l = 0; l < config.n_layers; ++l) {
        auto block = block_manifest("mapper.block" + std::to_string(l), d);
        manifest.insert(manifest.end(), block.begin(), block.end());
    }
    return manifest;
}

std::size_t count_params(const MapperConfig& config) {
    config.validate();
    const std::size_t d = config.d_model;
    const std::size_t c = config.clip_length;
    return config.clip_dim * c * d + c * d + config.prefix_length * d + config.n_layers * block_param_count(d);
}

ParameterStore<float> mapper_init(const MapperConfig& config, std::uint64_t seed) {
    ParameterStore<float> store;
    init_from_manifest(store, mapper_manifest(config), seed);
    return store;
}

template <class T>
Var map_embedding(Graph<T>& g, const MapperConfig& config, std::span<const float> e) {
    if (e.size() != config.clip_dim) {
        throw DimensionError("map_embedding: dimension mismatch, embedding has " + std::to_string(e.size()) + " values, expected " +
                             std::to_string(config.clip_dim));
    }
    const Var input = g.constant(Tensor<T>({1, e.size()}, std::vector<T>(e.begin(), e.end())));
    Var clip = add_bias(g, matmul(g, input, g.param("mapper.proj.w")), g.param("mapper.proj.b"));
    clip = reshape(g, clip, {config.clip_length, config.d_model});
    Var x = concat_rows(g, g.param("mapper.prefix"), clip);
    for (std::size_t l = 0; l < config.n_layers; ++l) {
        x = transformer_block(g, "mapper.block" + std::to_string(l), x, config.n_heads, /*causal=*/false);
    }
    return slice_rows(g, x, 0, config.prefix_length);
}

template Var map_embedding<float>(Graph<float>&, const MapperConfig&, std::span<const float>);
template Var map_embedding<double>(Graph<double>&, const MapperConfig&, std::span<const float>);

}  // namespace pfx
