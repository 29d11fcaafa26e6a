#include "loraseg/backbone.hpp"

#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace loraseg {

namespace {

void require(bool ok, const std::string &what) {
    if (!ok) throw std::invalid_argument(what);
}

std::string point_str(const Point &p) {
    std::ostringstream os;
    os << '(' << p.x << ", " << p.y << ')';
    return os.str();
}

void check_point(const Point &p, ImageSize size, const std::string &label) {
    const bool ok = std::isfinite(p.x) && std::isfinite(p.y) && p.x >= 0 && p.y >= 0 && p.x <= size.width - 1 &&
                    p.y <= size.height - 1;
    if (!ok)
        throw std::invalid_argument(label + " " + point_str(p) + " lies outside the " + std::to_string(size.width) +
                                    "x" + std::to_string(size.height) + " image");
}

} // namespace

int padded_extent(int n) { return (n + 31) / 32 * 32; }

void EncoderConfig::validate() const {
    require(patch_stride == 4, "encoder patch_stride must be 4 so stages sit at strides 4, 8, 16, 32");
    require(stage_depths.size() == 4 && stage_dims.size() == 4 && window_sizes.size() == 4 && heads.size() == 4,
            "encoder needs exactly four stages");
    for (std::size_t i = 0; i < 4; ++i) {
        require(stage_depths[i] >= 1, "encoder stage depth must be positive");
        require(heads[i] >= 1 && stage_dims[i] % heads[i] == 0, "encoder stage dim must divide by its head count");
        require(window_sizes[i] >= 0, "encoder window size must be non-negative");
        if (i) require(stage_dims[i] > stage_dims[i - 1], "encoder stage_dims must be strictly increasing");
    }
    require(stage_dims[0] >= 1 && mlp_ratio >= 1, "encoder dims and mlp_ratio must be positive");
}

int EncoderConfig::attention_blocks() const {
    int n = 0;
    for (int d : stage_depths) n += d;
    return n;
}

void DecoderConfig::validate() const {
    require(num_attention_blocks >= 1, "decoder needs at least one attention block");
    require(token_dim % 8 == 0 && token_dim >= 8, "decoder token_dim must be a positive multiple of 8");
    require(cross_attention_downsample >= 1 && token_dim % cross_attention_downsample == 0,
            "decoder cross_attention_downsample must divide token_dim");
    require(heads >= 1 && (token_dim / cross_attention_downsample) % heads == 0,
            "decoder heads must divide the attention width");
    require(mlp_dim >= 1, "decoder mlp_dim must be positive");
    require(num_mask_tokens == 1, "decoder supports a single mask token");
}

void ModelConfig::validate() const {
    encoder.validate();
    decoder.validate();
}

void PromptSet::validate(ImageSize size) const {
    for (std::size_t i = 0; i < positive_points.size(); ++i)
        check_point(positive_points[i], size, "positive point " + std::to_string(i));
    for (std::size_t i = 0; i < negative_points.size(); ++i)
        check_point(negative_points[i], size, "negative point " + std::to_string(i));
    for (std::size_t i = 0; i < boxes.size(); ++i) {
        const Box &b = boxes[i];
        const std::string label = "box " + std::to_string(i);
        check_point({b.x_min, b.y_min}, size, label + " corner");
        check_point({b.x_max, b.y_max}, size, label + " corner");
        if (!(b.x_min < b.x_max && b.y_min < b.y_max))
            throw std::invalid_argument(label + " is degenerate: need x_min < x_max and y_min < y_max");
    }
}

std::vector<double> positional_encoding(double x, double y, int token_dim) {
    const int nf = token_dim / 4;
    std::vector<double> pe(static_cast<std::size_t>(token_dim));
    for (int k = 0; k < nf; ++k) {
        const double f = std::numbers::pi * std::exp2(7.0 * k / (nf - 1));
        pe[k] = std::sin(f * x);
        pe[nf + k] = std::cos(f * x);
        pe[2 * nf + k] = std::sin(f * y);
        pe[3 * nf + k] = std::cos(f * y);
    }
    return pe;
}

// ---- image encoder ---------------------------------------------------------

template <typename T>
ImageEncoder<T>::ImageEncoder(const EncoderConfig &cfg, ParamInit &init) : cfg_(cfg) {
    cfg.validate();
    const auto &dims = cfg.stage_dims;
    patch_embed = Conv2d<T>(3, dims[0], 7, 4, 3, init);
    for (int s = 0; s < 4; ++s) {
        if (s) downsample.emplace_back(dims[s - 1], dims[s], 2, 2, 0, init);
        std::vector<Block> blocks;
        for (int b = 0; b < cfg.stage_depths[s]; ++b) {
            Block blk;
            blk.norm1 = LayerNorm<T>(dims[s]);
            blk.attn = Attention<T>(dims[s], cfg.heads[s], 1, init);
            blk.norm2 = LayerNorm<T>(dims[s]);
            blk.mlp = Mlp<T>({dims[s], dims[s] * cfg.mlp_ratio, dims[s]}, init);
            blk.window = cfg.window_sizes[s];
            blocks.push_back(std::move(blk));
        }
        stages.push_back(std::move(blocks));
    }
}

template <typename T>
Tensor<T> ImageEncoder<T>::Block::forward(const Tensor<T> &x) const {
    const std::int64_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
    const Tensor<T> y = norm1.forward(x);
    Tensor<T> a;
    if (window > 0 && (h > window || w > window)) {
        a = attn.forward(window_partition(y, window));
        a = window_unpartition(a, window, static_cast<int>(h), static_cast<int>(w));
    } else {
        a = reshape(attn.forward(reshape(y, {1, h * w, c})), {h, w, c});
    }
    const Tensor<T> x1 = add(x, a);
    return add(x1, mlp.forward(norm2.forward(x1)));
}

template <typename T>
FeaturePyramid<T> ImageEncoder<T>::forward(const Tensor<T> &image) const {
    if (image.rank() != 3 || image.dim(0) != 3)
        throw ShapeError("encode_image expects [3, H, W], got " + shape_str(image.shape()));
    const auto h = image.dim(1), w = image.dim(2);
    if (h % 32 != 0 || w % 32 != 0 || h == 0 || w == 0)
        throw ShapeError("encode_image: height and width must be multiples of 32, got " + std::to_string(h) + "x" +
                         std::to_string(w));
    FeaturePyramid<T> out;
    Tensor<T> x = permute(patch_embed.forward(image), {1, 2, 0});
    for (int s = 0; s < 4; ++s) {
        if (s) x = permute(downsample[s - 1].forward(permute(x, {2, 0, 1})), {1, 2, 0});
        for (const auto &blk : stages[s]) x = blk.forward(x);
        out.maps[s] = permute(x, {2, 0, 1});
    }
    return out;
}

template <typename T>
void ImageEncoder<T>::collect(const std::string &prefix, ParamList<T> &out) {
    patch_embed.collect(prefix + ".patch_embed", out);
    for (std::size_t s = 0; s < stages.size(); ++s) {
        const std::string sp = prefix + ".stage" + std::to_string(s);
        if (s) downsample[s - 1].collect(sp + ".downsample", out);
        for (std::size_t b = 0; b < stages[s].size(); ++b) {
            const std::string bp = sp + ".block" + std::to_string(b);
            auto &blk = stages[s][b];
            blk.norm1.collect(bp + ".norm1", out);
            blk.attn.collect(bp + ".attn", out);
            blk.norm2.collect(bp + ".norm2", out);
            blk.mlp.collect(bp + ".mlp", out);
        }
    }
}

// ---- prompt encoder --------------------------------------------------------

template <typename T>
PromptEncoder<T>::PromptEncoder(int token_dim, ParamInit &init) : token_dim_(token_dim) {
    kind_embed = trainable(init.normal<T>({4, token_dim}, 1.0));
    not_a_point = trainable(init.normal<T>({1, token_dim}, 1.0));
    no_mask_embed = trainable(init.normal<T>({token_dim}, 1.0));
}

template <typename T>
PromptTokens<T> PromptEncoder<T>::encode(const PromptSet &prompts, ImageSize frame) const {
    prompts.validate(frame);
    std::vector<Tensor<T>> rows;
    auto add_token = [&](Point p, Kind kind) {
        const auto pe = positional_encoding((p.x + 0.5) / frame.width, (p.y + 0.5) / frame.height, token_dim_);
        Tensor<T> enc({1, token_dim_});
        auto d = enc.mutable_data();
        for (int i = 0; i < token_dim_; ++i) d[i] = static_cast<T>(pe[i]);
        rows.push_back(add(enc, slice(kind_embed, 0, kind, kind + 1)));
    };
    for (const auto &p : prompts.positive_points) add_token(p, positive);
    for (const auto &p : prompts.negative_points) add_token(p, negative);
    for (const auto &b : prompts.boxes) {
        add_token({b.x_min, b.y_min}, box_top_left);
        add_token({b.x_max, b.y_max}, box_bottom_right);
    }
    if (prompts.boxes.empty()) rows.push_back(not_a_point);
    return {concat(rows, 0)};
}

template <typename T>
Tensor<T> PromptEncoder<T>::dense_pe(int h, int w) const {
    Tensor<T> out({std::int64_t(h) * w, token_dim_});
    auto d = out.mutable_data();
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
            const auto pe = positional_encoding((j + 0.5) / w, (i + 0.5) / h, token_dim_);
            std::copy(pe.begin(), pe.end(), d.begin() + (std::size_t(i) * w + j) * token_dim_);
        }
    return out;
}

template <typename T>
void PromptEncoder<T>::collect(const std::string &prefix, ParamList<T> &out) {
    out.push_back({prefix + ".kind_embed", &kind_embed});
    out.push_back({prefix + ".not_a_point", &not_a_point});
    out.push_back({prefix + ".no_mask_embed", &no_mask_embed});
}

// ---- mask decoder ----------------------------------------------------------

template <typename T>
MaskDecoder<T>::MaskDecoder(const DecoderConfig &cfg, const EncoderConfig &enc, ParamInit &init) : cfg_(cfg) {
    cfg.validate();
    const int d = cfg.token_dim;
    const auto &dims = enc.stage_dims;
    neck16 = Conv2d<T>(dims[2], d, 1, 1, 0, init);
    neck32 = Conv2d<T>(dims[3], d, 1, 1, 0, init);
    skip8 = Conv2d<T>(dims[1], d / 4, 1, 1, 0, init);
    skip4 = Conv2d<T>(dims[0], d / 8, 1, 1, 0, init);
    mask_token = trainable(init.normal<T>({1, d}, 1.0));
    for (int i = 0; i < cfg.num_attention_blocks; ++i) {
        TwoWayBlock b;
        b.self_attn = Attention<T>(d, cfg.heads, 1, init);
        b.norm1 = LayerNorm<T>(d, T(1e-5));
        b.token_to_image = Attention<T>(d, cfg.heads, cfg.cross_attention_downsample, init);
        b.norm2 = LayerNorm<T>(d, T(1e-5));
        b.mlp = Mlp<T>({d, cfg.mlp_dim, d}, init);
        b.norm3 = LayerNorm<T>(d, T(1e-5));
        b.image_to_token = Attention<T>(d, cfg.heads, cfg.cross_attention_downsample, init);
        b.norm4 = LayerNorm<T>(d, T(1e-5));
        b.skip_first_pe = (i == 0);
        blocks.push_back(std::move(b));
    }
    final_attn = Attention<T>(d, cfg.heads, cfg.cross_attention_downsample, init);
    final_norm = LayerNorm<T>(d, T(1e-5));
    up1 = ConvTranspose2d<T>(d, d / 4, 2, 2, init);
    up_norm = LayerNorm<T>(d / 4);
    up2 = ConvTranspose2d<T>(d / 4, d / 8, 2, 2, init);
    hyper = Mlp<T>({d, d, d, d / 8}, init);
}

template <typename T>
Tensor<T> MaskDecoder<T>::forward(const FeaturePyramid<T> &f, const PromptTokens<T> &prompt_tokens,
                                  const PromptEncoder<T> &prompts, ImageSize out) const {
    const std::int64_t d = cfg_.token_dim;
    const std::int64_t h16 = f.maps[2].dim(1), w16 = f.maps[2].dim(2);
    if (f.maps[3].dim(1) * 2 != h16 || f.maps[3].dim(2) * 2 != w16 || f.maps[1].dim(1) != h16 * 2 ||
        f.maps[0].dim(1) != h16 * 4)
        throw ShapeError("decode_mask: feature maps are not stride-consistent");
    if (prompt_tokens.tokens.rank() != 2 || prompt_tokens.tokens.dim(1) != d)
        throw ShapeError("decode_mask: prompt tokens " + shape_str(prompt_tokens.tokens.shape()) +
                         " do not match token_dim " + std::to_string(d));

    const Tensor<T> fused = add(neck16.forward(f.maps[2]),
                                resize_bilinear(neck32.forward(f.maps[3]), int(h16), int(w16)));
    const Tensor<T> s8 = skip8.forward(f.maps[1]);
    const Tensor<T> s4 = skip4.forward(f.maps[0]);

    const std::int64_t n_img = h16 * w16;
    Tensor<T> keys = reshape(add_bias(permute(fused, {1, 2, 0}), prompts.no_mask_embed), {1, n_img, d});
    const Tensor<T> key_pe = reshape(prompts.dense_pe(int(h16), int(w16)), {1, n_img, d});
    const Tensor<T> tokens = reshape(concat<T>({mask_token, prompt_tokens.tokens}, 0), {1, 1 + prompt_tokens.count(), d});
    Tensor<T> queries = tokens;

    for (const auto &b : blocks) {
        if (b.skip_first_pe) {
            queries = b.self_attn.forward(queries, queries, queries);
        } else {
            const Tensor<T> q = add(queries, tokens);
            queries = add(queries, b.self_attn.forward(q, q, queries));
        }
        queries = b.norm1.forward(queries);
        Tensor<T> q = add(queries, tokens);
        Tensor<T> k = add(keys, key_pe);
        queries = b.norm2.forward(add(queries, b.token_to_image.forward(q, k, keys)));
        queries = b.norm3.forward(add(queries, b.mlp.forward(queries)));
        q = add(queries, tokens);
        k = add(keys, key_pe);
        keys = b.norm4.forward(add(keys, b.image_to_token.forward(k, q, queries)));
    }
    {
        const Tensor<T> q = add(queries, tokens);
        const Tensor<T> k = add(keys, key_pe);
        queries = final_norm.forward(add(queries, final_attn.forward(q, k, keys)));
    }

    const Tensor<T> mask_out = reshape(slice(queries, 1, 0, 1), {1, d});
    const Tensor<T> weights = hyper.forward(mask_out); // [1, d/8]

    const Tensor<T> image = permute(reshape(keys, {h16, w16, d}), {2, 0, 1});
    Tensor<T> u = add(up1.forward(image), s8);
    u = gelu(up_norm.forward_channels_first(u));
    u = gelu(add(up2.forward(u), s4));
    const std::int64_t h4 = u.dim(1), w4 = u.dim(2);
    const Tensor<T> low = reshape(matmul(weights, reshape(u, {d / 8, h4 * w4})), {1, h4, w4});
    return resize_bilinear(low, out.height, out.width);
}

template <typename T>
void MaskDecoder<T>::collect(const std::string &prefix, ParamList<T> &out) {
    neck16.collect(prefix + ".neck16", out);
    neck32.collect(prefix + ".neck32", out);
    skip8.collect(prefix + ".skip8", out);
    skip4.collect(prefix + ".skip4", out);
    out.push_back({prefix + ".mask_token", &mask_token});
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        const std::string bp = prefix + ".block" + std::to_string(i);
        auto &b = blocks[i];
        b.self_attn.collect(bp + ".self_attn", out);
        b.norm1.collect(bp + ".norm1", out);
        b.token_to_image.collect(bp + ".token_to_image", out);
        b.norm2.collect(bp + ".norm2", out);
        b.mlp.collect(bp + ".mlp", out);
        b.norm3.collect(bp + ".norm3", out);
        b.image_to_token.collect(bp + ".image_to_token", out);
        b.norm4.collect(bp + ".norm4", out);
    }
    final_attn.collect(prefix + ".final_attn", out);
    final_norm.collect(prefix + ".final_norm", out);
    up1.collect(prefix + ".up1", out);
    up_norm.collect(prefix + ".up_norm", out);
    up2.collect(prefix + ".up2", out);
    hyper.collect(prefix + ".hyper", out);
}

// ---- full model ------------------------------------------------------------

template <typename T>
SegmentationModel<T>::SegmentationModel(const ModelConfig &cfg) : cfg_(cfg) {
    cfg.validate();
    ParamInit init(cfg.seed);
    encoder = ImageEncoder<T>(cfg.encoder, init);
    prompt_encoder = PromptEncoder<T>(cfg.decoder.token_dim, init);
    decoder = MaskDecoder<T>(cfg.decoder, cfg.encoder, init);
}

template <typename T>
FeaturePyramid<T> SegmentationModel<T>::encode_image(const Tensor<T> &image) const {
    return encoder.forward(image);
}

template <typename T>
PromptTokens<T> SegmentationModel<T>::encode_prompts(const PromptSet &prompts, ImageSize size) const {
    return prompt_encoder.encode(prompts, size);
}

template <typename T>
Tensor<T> SegmentationModel<T>::decode_mask(const FeaturePyramid<T> &features, const PromptTokens<T> &tokens,
                                            ImageSize size) const {
    return decoder.forward(features, tokens, prompt_encoder, size);
}

template <typename T>
Tensor<T> SegmentationModel<T>::forward(const Tensor<T> &image, const PromptSet &prompts) const {
    if (image.rank() != 3 || image.dim(0) != 3)
        throw ShapeError("forward expects [3, H, W], got " + shape_str(image.shape()));
    const int h = static_cast<int>(image.dim(1)), w = static_cast<int>(image.dim(2));
    prompts.validate({h, w});
    const int hp = padded_extent(h), wp = padded_extent(w);
    Tensor<T> x = image;
    if (wp != w) x = concat<T>({x, Tensor<T>({3, h, wp - w})}, 2);
    if (hp != h) x = concat<T>({x, Tensor<T>({3, hp - h, wp})}, 1);
    const ImageSize frame{hp, wp};
    Tensor<T> logits = decode_mask(encode_image(x), encode_prompts(prompts, frame), frame);
    if (hp != h) logits = slice(logits, 1, 0, h);
    if (wp != w) logits = slice(logits, 2, 0, w);
    return logits;
}

template <typename T>
ParamList<T> SegmentationModel<T>::parameters() {
    ParamList<T> out;
    encoder.collect("encoder", out);
    prompt_encoder.collect("prompt_encoder", out);
    decoder.collect("decoder", out);
    return out;
}

template <typename T>
std::size_t SegmentationModel<T>::parameter_count() {
    std::size_t n = 0;
    for (const auto &p : parameters()) n += p.tensor->numel();
    return n;
}

template <typename T>
std::size_t SegmentationModel<T>::base_parameter_count() {
    std::size_t n = 0;
    for (const auto &p : parameters()) {
        const bool adapter = p.name.ends_with(".lora_A") || p.name.ends_with(".lora_B");
        if (!adapter) n += p.tensor->numel();
    }
    return n;
}

template <typename T>
void SegmentationModel<T>::freeze_all() {
    for (auto &p : parameters()) p.tensor->set_requires_grad(false);
}

template <typename T>
std::vector<typename SegmentationModel<T>::Site> SegmentationModel<T>::attention_sites() {
    std::vector<Site> out;
    for (std::size_t s = 0; s < encoder.stages.size(); ++s)
        for (std::size_t b = 0; b < encoder.stages[s].size(); ++b)
            out.push_back({"encoder.stage" + std::to_string(s) + ".block" + std::to_string(b) + ".attn", true,
                           &encoder.stages[s][b].attn});
    for (std::size_t i = 0; i < decoder.blocks.size(); ++i) {
        const std::string bp = "decoder.block" + std::to_string(i);
        out.push_back({bp + ".self_attn", false, &decoder.blocks[i].self_attn});
        out.push_back({bp + ".token_to_image", false, &decoder.blocks[i].token_to_image});
        out.push_back({bp + ".image_to_token", false, &decoder.blocks[i].image_to_token});
    }
    out.push_back({"decoder.final_attn", false, &decoder.final_attn});
    return out;
}

template class ImageEncoder<float>;
template class ImageEncoder<double>;
template class PromptEncoder<float>;
template class PromptEncoder<double>;
template class MaskDecoder<float>;
template class MaskDecoder<double>;
template class SegmentationModel<float>;
template class SegmentationModel<double>;

} // namespace loraseg
