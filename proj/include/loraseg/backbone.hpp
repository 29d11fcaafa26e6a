#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "loraseg/nn.hpp"
#include "loraseg/tensor.hpp"

namespace loraseg {

struct ImageSize {
    int height = 0;
    int width = 0;
};

struct EncoderConfig {
    int patch_stride = 4;
    std::vector<int> stage_depths{1, 1, 2, 1};
    std::vector<int> stage_dims{32, 64, 128, 256};
    // 0 means global attention.
    std::vector<int> window_sizes{8, 8, 4, 0};
    std::vector<int> heads{1, 2, 4, 8};
    int mlp_ratio = 4;

    void validate() const;
    int attention_blocks() const;
};

struct DecoderConfig {
    int num_attention_blocks = 2;
    int token_dim = 256;
    int heads = 8;
    int mlp_dim = 3072;
    int cross_attention_downsample = 2;
    int num_mask_tokens = 1;

    void validate() const;
    // Two-way blocks carry three attention modules each, plus the final
    // token-to-image attention.
    int attention_modules() const { return 3 * num_attention_blocks + 1; }
};

struct ModelConfig {
    EncoderConfig encoder;
    DecoderConfig decoder;
    std::uint64_t seed = 0;

    void validate() const;
};

struct Point {
    double x = 0;
    double y = 0;
};

struct Box {
    double x_min = 0, y_min = 0, x_max = 0, y_max = 0;
};

struct PromptSet {
    std::vector<Point> positive_points;
    std::vector<Point> negative_points;
    std::vector<Box> boxes;

    bool empty() const { return positive_points.empty() && negative_points.empty() && boxes.empty(); }
    // Coordinates must lie in [0, W-1] x [0, H-1]; throws std::invalid_argument
    // naming the offending prompt.
    void validate(ImageSize size) const;
};

template <typename T>
struct FeaturePyramid {
    // [stage_dims[i], H / 2^(i+2), W / 2^(i+2)]
    std::array<Tensor<T>, 4> maps;
};

template <typename T>
struct PromptTokens {
    Tensor<T> tokens; // [n, token_dim]
    std::int64_t count() const { return tokens.dim(0); }
};

// Sinusoidal encoding of normalised (x, y): token_dim / 4 frequencies,
// laid out as [sin x, cos x, sin y, cos y].
std::vector<double> positional_encoding(double x, double y, int token_dim);

template <typename T>
class ImageEncoder {
public:
    ImageEncoder() = default;
    ImageEncoder(const EncoderConfig &cfg, ParamInit &init);

    struct Block {
        LayerNorm<T> norm1, norm2;
        Attention<T> attn;
        Mlp<T> mlp;
        int window = 0;
        Tensor<T> forward(const Tensor<T> &x) const; // x[h, w, C]
    };

    const EncoderConfig &config() const { return cfg_; }
    FeaturePyramid<T> forward(const Tensor<T> &image) const;
    void collect(const std::string &prefix, ParamList<T> &out);

    Conv2d<T> patch_embed;
    std::vector<Conv2d<T>> downsample;
    std::vector<std::vector<Block>> stages;

private:
    EncoderConfig cfg_;
};

template <typename T>
class PromptEncoder {
public:
    PromptEncoder() = default;
    PromptEncoder(int token_dim, ParamInit &init);

    enum Kind { negative = 0, positive = 1, box_top_left = 2, box_bottom_right = 3 };

    // Coordinates are normalised by `frame`, the size the dense encoding spans.
    PromptTokens<T> encode(const PromptSet &prompts, ImageSize frame) const;
    // [h * w, token_dim], cell centres in row-major order.
    Tensor<T> dense_pe(int h, int w) const;
    void collect(const std::string &prefix, ParamList<T> &out);

    Tensor<T> kind_embed;     // [4, token_dim]
    Tensor<T> not_a_point;    // [1, token_dim]
    Tensor<T> no_mask_embed;  // [token_dim]

private:
    int token_dim_ = 0;
};

template <typename T>
class MaskDecoder {
public:
    MaskDecoder() = default;
    MaskDecoder(const DecoderConfig &cfg, const EncoderConfig &enc, ParamInit &init);

    struct TwoWayBlock {
        Attention<T> self_attn, token_to_image, image_to_token;
        LayerNorm<T> norm1, norm2, norm3, norm4;
        Mlp<T> mlp;
        bool skip_first_pe = false;
    };

    const DecoderConfig &config() const { return cfg_; }
    // Returns logits [1, out.height, out.width].
    Tensor<T> forward(const FeaturePyramid<T> &features, const PromptTokens<T> &tokens,
                      const PromptEncoder<T> &prompts, ImageSize out) const;
    void collect(const std::string &prefix, ParamList<T> &out);

    Conv2d<T> neck16, neck32, skip8, skip4;
    Tensor<T> mask_token; // [1, token_dim]
    std::vector<TwoWayBlock> blocks;
    Attention<T> final_attn;
    LayerNorm<T> final_norm;
    ConvTranspose2d<T> up1, up2;
    LayerNorm<T> up_norm;
    Mlp<T> hyper;

private:
    DecoderConfig cfg_;
};

template <typename T>
class SegmentationModel {
public:
    explicit SegmentationModel(const ModelConfig &cfg = {});

    const ModelConfig &config() const { return cfg_; }

    // image[3, H, W] with H, W multiples of 32.
    FeaturePyramid<T> encode_image(const Tensor<T> &image) const;
    PromptTokens<T> encode_prompts(const PromptSet &prompts, ImageSize size) const;
    Tensor<T> decode_mask(const FeaturePyramid<T> &features, const PromptTokens<T> &tokens, ImageSize size) const;

    // Any H, W: zero-pads to the next multiple of 32, crops the logits back.
    // Returns logits [1, H, W].
    Tensor<T> forward(const Tensor<T> &image, const PromptSet &prompts) const;

    // Every parameter, adapters included, under stable dotted names.
    ParamList<T> parameters();
    std::size_t parameter_count();
    // Parameters that are not adapter factors.
    std::size_t base_parameter_count();
    void freeze_all();

    struct Site {
        std::string name;
        bool in_encoder;
        Attention<T> *attention;
    };
    std::vector<Site> attention_sites();

    ImageEncoder<T> encoder;
    PromptEncoder<T> prompt_encoder;
    MaskDecoder<T> decoder;

private:
    ModelConfig cfg_;
};

// Next multiple of 32 at or above n.
int padded_extent(int n);

} // namespace loraseg
