#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "wid/keypoints.hpp"
#include "wid/rng.hpp"
#include "wid/tensor.hpp"

namespace wid {

static_assert(std::endian::native == std::endian::little,
              "weight files are little-endian float64");

struct ConvLayer {
    Param weight; // (OC, IC, KH, KW)
    Param bias;   // (OC)
    int stride = 1;
    int pad = 0;
    Activation act = Activation::kRelu;

    static ConvLayer make(const std::string& name, int oc, int ic, int k, int stride, int pad,
                          Activation act, Rng& rng) {
        ConvLayer l;
        l.weight = Param(name + ".weight", Tensor({oc, ic, k, k}));
        l.bias = Param(name + ".bias", Tensor({oc}));
        const double std_dev = std::sqrt(2.0 / (static_cast<double>(ic) * k * k));
        for (double& w : l.weight.value.v) w = rng.next_gaussian() * std_dev;
        l.stride = stride;
        l.pad = pad;
        l.act = act;
        return l;
    }

    Tape::Node* forward(Tape& tape, Tape::Node* x) {
        return tape.conv2d(x, tape.leaf(weight), tape.leaf(bias), stride, pad, act);
    }
};

// relu( conv2(conv1(x)) + skip(x) ); conv1 applies relu internally, conv2 is
// linear, skip is identity or a 1x1 projection when shape changes.
struct ResidualBlock {
    ConvLayer conv1;
    ConvLayer conv2;
    bool has_projection = false;
    ConvLayer projection;

    static ResidualBlock make(const std::string& name, int in_ch, int out_ch, int entry_stride,
                              Rng& rng) {
        ResidualBlock b;
        b.conv1 = ConvLayer::make(name + ".conv1", out_ch, in_ch, 3, entry_stride, 1,
                                  Activation::kRelu, rng);
        b.conv2 = ConvLayer::make(name + ".conv2", out_ch, out_ch, 3, 1, 1, Activation::kIdentity, rng);
        if (in_ch != out_ch || entry_stride != 1) {
            b.has_projection = true;
            b.projection = ConvLayer::make(name + ".skip", out_ch, in_ch, 1, entry_stride, 0,
                                           Activation::kIdentity, rng);
        }
        return b;
    }

    Tape::Node* forward(Tape& tape, Tape::Node* x) {
        Tape::Node* main = conv2.forward(tape, conv1.forward(tape, x));
        Tape::Node* skip = has_projection ? projection.forward(tape, x) : x;
        if (main->value.shape != skip->value.shape)
            throw DimensionError("residual block: main and skip path shapes differ");
        return tape.relu(tape.add(main, skip));
    }
};

// Residual embedder: stem conv, a stack of stride-2 residual blocks, global
// average pooling and a dense projection to the embedding dimension.
struct EmbedNet {
    ConvLayer stem;
    std::vector<ResidualBlock> blocks;
    Param fc_weight; // (D, C)
    Param fc_bias;   // (D)
    int embed_dim = 0;

    // desk-scale topology for 1x105x105 input
    static EmbedNet make(int embed_dim, std::uint64_t seed) {
        if (embed_dim != 256 && embed_dim != 512 && embed_dim != 1024 && embed_dim != 2048)
            throw ParameterError("EmbedNet: embed_dim must be one of 256/512/1024/2048");
        Rng rng(seed);
        return make_custom(embed_dim, 1, 16, {16, 32, 64, 128}, rng);
    }

    static EmbedNet make_custom(int embed_dim, int in_ch, int stem_filters,
                                const std::vector<int>& block_filters, Rng& rng) {
        EmbedNet net;
        net.embed_dim = embed_dim;
        net.stem = ConvLayer::make("stem", stem_filters, in_ch, 7, 2, 3, Activation::kRelu, rng);
        int ch = stem_filters;
        for (std::size_t i = 0; i < block_filters.size(); ++i) {
            net.blocks.push_back(
                ResidualBlock::make("block" + std::to_string(i), ch, block_filters[i], 2, rng));
            ch = block_filters[i];
        }
        net.fc_weight = Param("fc.weight", Tensor({embed_dim, ch}));
        net.fc_bias = Param("fc.bias", Tensor({embed_dim}));
        const double std_dev = std::sqrt(1.0 / ch);
        for (double& w : net.fc_weight.value.v) w = rng.next_gaussian() * std_dev;
        return net;
    }

    Tape::Node* forward(Tape& tape, Tape::Node* x) {
        Tape::Node* h = stem.forward(tape, x);
        for (ResidualBlock& b : blocks) h = b.forward(tape, h);
        h = tape.global_avg_pool(h);
        return tape.dense(h, tape.leaf(fc_weight), tape.leaf(fc_bias));
    }

    std::vector<Param*> params() {
        std::vector<Param*> out;
        auto add_layer = [&](ConvLayer& l) {
            out.push_back(&l.weight);
            out.push_back(&l.bias);
        };
        add_layer(stem);
        for (ResidualBlock& b : blocks) {
            add_layer(b.conv1);
            add_layer(b.conv2);
            if (b.has_projection) add_layer(b.projection);
        }
        out.push_back(&fc_weight);
        out.push_back(&fc_bias);
        return out;
    }

    void zero_grads() {
        for (Param* p : params()) p->zero_grad();
    }
};

using EmbeddingVector = std::vector<double>;

inline Tensor patch_to_tensor(const NormalizedPatch& p) {
    Tensor t({1, p.image.height, p.image.width});
    for (std::size_t i = 0; i < p.image.pixels.size(); ++i)
        t.v[i] = p.image.pixels[i] / 255.0;
    return t;
}

// --- plain tensor entry points ---------------------------------------------

inline Tensor conv_forward(ConvLayer& layer, const Tensor& input) {
    Tape tape;
    return layer.forward(tape, tape.input(input))->value;
}

inline Tensor residual_forward(ResidualBlock& block, const Tensor& input) {
    Tape tape;
    return block.forward(tape, tape.input(input))->value;
}

inline EmbeddingVector embed(EmbedNet& net, const NormalizedPatch& patch) {
    if (patch.image.width != NormalizedPatch::kSide || patch.image.height != NormalizedPatch::kSide)
        throw DimensionError("embed: patch must be 105x105");
    Tape tape;
    return net.forward(tape, tape.input(patch_to_tensor(patch)))->value.v;
}

inline EmbeddingVector embed_tensor(EmbedNet& net, const Tensor& t) {
    Tape tape;
    return net.forward(tape, tape.input(t))->value.v;
}

inline double triplet_loss(const EmbeddingVector& fa, const EmbeddingVector& fp,
                           const EmbeddingVector& fn, double margin) {
    if (fa.size() != fp.size() || fa.size() != fn.size())
        throw DimensionError("triplet_loss: length mismatch");
    double dp = 0.0, dn = 0.0;
    for (std::size_t i = 0; i < fa.size(); ++i) {
        const double ep = fa[i] - fp[i];
        const double en = fa[i] - fn[i];
        dp += ep * ep;
        dn += en * en;
    }
    return std::max(dp - dn + margin, 0.0);
}

inline double contrastive_loss(const EmbeddingVector& fa, const EmbeddingVector& fb, bool same,
                               double margin) {
    if (fa.size() != fb.size()) throw DimensionError("contrastive_loss: length mismatch");
    double d2 = 0.0;
    for (std::size_t i = 0; i < fa.size(); ++i) {
        const double e = fa[i] - fb[i];
        d2 += e * e;
    }
    if (same) return d2;
    const double hinge = std::max(margin - std::sqrt(d2), 0.0);
    return hinge * hinge;
}

// graph builders used in training
inline Tape::Node* triplet_loss_node(Tape& t, Tape::Node* fa, Tape::Node* fp, Tape::Node* fn,
                                     double margin) {
    Tape::Node* gap = t.add_scalar(t.sub(t.sqdist(fa, fp), t.sqdist(fa, fn)), margin);
    return t.relu(gap);
}

inline Tape::Node* contrastive_loss_node(Tape& t, Tape::Node* fa, Tape::Node* fb, bool same,
                                         double margin) {
    if (same) return t.sqdist(fa, fb);
    return t.square(t.relu(t.add_scalar(t.scale(t.l2dist(fa, fb), -1.0), margin)));
}

// --- training --------------------------------------------------------------

enum class LossKind { kTriplet, kContrastive };

struct TrainConfig {
    int batch_size = 16;
    double learning_rate = 0.001;
    int epochs = 2;
    std::uint64_t seed = 0;
    double margin = 0.2;
    int triplets_per_epoch = 0; // 0: one per training sample
    LossKind loss = LossKind::kTriplet;
};

struct PatchDataset {
    std::vector<Tensor> samples; // (1,105,105) tensors in [0,1]
    std::vector<int> labels;

    void add(const NormalizedPatch& p, int label) {
        samples.push_back(patch_to_tensor(p));
        labels.push_back(label);
    }
    std::size_t size() const { return samples.size(); }
};

struct TripletIdx {
    std::size_t anchor, positive, negative;
};

struct TrainResult {
    std::vector<double> epoch_loss;
};

namespace detail {

inline std::map<int, std::vector<std::size_t>> by_class(const std::vector<int>& labels) {
    std::map<int, std::vector<std::size_t>> out;
    for (std::size_t i = 0; i < labels.size(); ++i) out[labels[i]].push_back(i);
    return out;
}

} // namespace detail

// One Adam step over a batch of triplets; returns the mean batch loss. The
// three branches run on one tape against the same parameter set, so the
// sharing is structural rather than copied.
inline double triplet_step(EmbedNet& net, const PatchDataset& data,
                           const std::vector<TripletIdx>& batch, double margin, Adam& opt) {
    net.zero_grads();
    Tape tape;
    std::vector<Tape::Node*> losses;
    losses.reserve(batch.size());
    for (const TripletIdx& tr : batch) {
        Tape::Node* fa = net.forward(tape, tape.input(data.samples[tr.anchor]));
        Tape::Node* fp = net.forward(tape, tape.input(data.samples[tr.positive]));
        Tape::Node* fn = net.forward(tape, tape.input(data.samples[tr.negative]));
        losses.push_back(triplet_loss_node(tape, fa, fp, fn, margin));
    }
    Tape::Node* loss = tape.mean(losses);
    tape.backward(loss);
    opt.step(net.params());
    return loss->value.v[0];
}

inline double contrastive_step(EmbedNet& net, const PatchDataset& data,
                               const std::vector<std::pair<std::size_t, std::size_t>>& pairs,
                               const std::vector<bool>& same, double margin, Adam& opt) {
    net.zero_grads();
    Tape tape;
    std::vector<Tape::Node*> losses;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        Tape::Node* fa = net.forward(tape, tape.input(data.samples[pairs[i].first]));
        Tape::Node* fb = net.forward(tape, tape.input(data.samples[pairs[i].second]));
        losses.push_back(contrastive_loss_node(tape, fa, fb, same[i], margin));
    }
    Tape::Node* loss = tape.mean(losses);
    tape.backward(loss);
    opt.step(net.params());
    return loss->value.v[0];
}

// Uniform random triplet mining: anchor class uniform over classes with two
// or more samples, negative class uniform over the others.
inline TrainResult train_siamese(const PatchDataset& data, EmbedNet& net, const TrainConfig& cfg) {
    const auto classes = detail::by_class(data.labels);
    if (classes.size() < 2) throw CorpusError("train_siamese: need at least 2 classes");
    std::vector<int> anchor_classes;
    std::vector<int> all_classes;
    for (const auto& [label, members] : classes) {
        all_classes.push_back(label);
        if (members.size() >= 2) anchor_classes.push_back(label);
    }
    if (anchor_classes.empty())
        throw CorpusError("train_siamese: no class has 2 or more samples");
    if (cfg.batch_size < 1) throw ParameterError("train_siamese: batch_size must be >= 1");
    if (cfg.learning_rate < 0.0) throw ParameterError("train_siamese: learning_rate must be >= 0");

    Rng rng(cfg.seed);
    Adam opt;
    opt.lr = cfg.learning_rate;
    TrainResult result;
    const std::size_t per_epoch =
        cfg.triplets_per_epoch > 0 ? static_cast<std::size_t>(cfg.triplets_per_epoch) : data.size();

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        double loss_sum = 0.0;
        std::size_t made = 0;
        while (made < per_epoch) {
            const std::size_t n = std::min<std::size_t>(cfg.batch_size, per_epoch - made);
            if (cfg.loss == LossKind::kTriplet) {
                std::vector<TripletIdx> batch;
                batch.reserve(n);
                for (std::size_t i = 0; i < n; ++i) {
                    const int ac = anchor_classes[rng.next_below(anchor_classes.size())];
                    const auto& pos = classes.at(ac);
                    const std::size_t a = pos[rng.next_below(pos.size())];
                    std::size_t p = pos[rng.next_below(pos.size())];
                    while (p == a) p = pos[rng.next_below(pos.size())];
                    int nc = all_classes[rng.next_below(all_classes.size())];
                    while (nc == ac) nc = all_classes[rng.next_below(all_classes.size())];
                    const auto& neg = classes.at(nc);
                    batch.push_back({a, p, neg[rng.next_below(neg.size())]});
                }
                loss_sum += triplet_step(net, data, batch, cfg.margin, opt) * static_cast<double>(n);
            } else {
                std::vector<std::pair<std::size_t, std::size_t>> pairs;
                std::vector<bool> same;
                for (std::size_t i = 0; i < n; ++i) {
                    const bool s = rng.next_below(2) == 0;
                    if (s) {
                        const int c = anchor_classes[rng.next_below(anchor_classes.size())];
                        const auto& m = classes.at(c);
                        const std::size_t a = m[rng.next_below(m.size())];
                        std::size_t b = m[rng.next_below(m.size())];
                        while (b == a) b = m[rng.next_below(m.size())];
                        pairs.emplace_back(a, b);
                    } else {
                        int c1 = all_classes[rng.next_below(all_classes.size())];
                        int c2 = all_classes[rng.next_below(all_classes.size())];
                        while (c2 == c1) c2 = all_classes[rng.next_below(all_classes.size())];
                        const auto& m1 = classes.at(c1);
                        const auto& m2 = classes.at(c2);
                        pairs.emplace_back(m1[rng.next_below(m1.size())], m2[rng.next_below(m2.size())]);
                    }
                    same.push_back(s);
                }
                loss_sum += contrastive_step(net, data, pairs, same, cfg.margin, opt) *
                            static_cast<double>(n);
            }
            made += n;
        }
        result.epoch_loss.push_back(loss_sum / static_cast<double>(per_epoch));
    }
    return result;
}

// --- clustering quality ------------------------------------------------

// Standard Davies-Bouldin index, Euclidean metric. Throws when two cluster
// centroids coincide (the ratio would be infinite).
inline double davies_bouldin(const std::vector<EmbeddingVector>& embeddings,
                             const std::vector<int>& labels) {
    if (embeddings.size() != labels.size())
        throw DimensionError("davies_bouldin: length mismatch");
    const auto classes = detail::by_class(labels);
    if (classes.size() < 2) throw ParameterError("davies_bouldin: need at least 2 clusters");
    const std::size_t dim = embeddings.empty() ? 0 : embeddings[0].size();

    std::vector<EmbeddingVector> centroids;
    std::vector<double> scatter;
    for (const auto& [label, members] : classes) {
        EmbeddingVector c(dim, 0.0);
        for (std::size_t idx : members)
            for (std::size_t d = 0; d < dim; ++d) c[d] += embeddings[idx][d];
        for (double& x : c) x /= static_cast<double>(members.size());
        double s = 0.0;
        for (std::size_t idx : members) {
            double d2 = 0.0;
            for (std::size_t d = 0; d < dim; ++d) {
                const double e = embeddings[idx][d] - c[d];
                d2 += e * e;
            }
            s += std::sqrt(d2);
        }
        centroids.push_back(std::move(c));
        scatter.push_back(s / static_cast<double>(members.size()));
    }

    const std::size_t k = centroids.size();
    double total = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        double worst = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            if (i == j) continue;
            double d2 = 0.0;
            for (std::size_t d = 0; d < dim; ++d) {
                const double e = centroids[i][d] - centroids[j][d];
                d2 += e * e;
            }
            const double dist = std::sqrt(d2);
            if (dist == 0.0)
                throw ParameterError("davies_bouldin: coincident centroids give an infinite ratio");
            worst = std::max(worst, (scatter[i] + scatter[j]) / dist);
        }
        total += worst;
    }
    return total / static_cast<double>(k);
}

// --- weight files ----------------------------------------------------------

inline void save_weights(EmbedNet& net, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    for (Param* p : net.params()) {
        const std::filesystem::path path = dir / (p->name + ".f64");
        std::FILE* f = std::fopen(path.string().c_str(), "wb");
        if (!f) throw IoError("cannot write " + path.string());
        const std::size_t n =
            std::fwrite(p->value.v.data(), sizeof(double), p->value.v.size(), f);
        std::fclose(f);
        if (n != p->value.v.size()) throw IoError("short write: " + path.string());
    }
}

inline void load_weights(EmbedNet& net, const std::filesystem::path& dir) {
    for (Param* p : net.params()) {
        const std::filesystem::path path = dir / (p->name + ".f64");
        std::FILE* f = std::fopen(path.string().c_str(), "rb");
        if (!f) throw IoError("missing weight file " + path.string());
        const std::size_t n = std::fread(p->value.v.data(), sizeof(double), p->value.v.size(), f);
        const bool extra = std::fgetc(f) != EOF;
        std::fclose(f);
        if (n != p->value.v.size() || extra)
            throw IntegrityError("weight file size mismatch: " + path.string());
    }
}

} // namespace wid
