#include "synthaug/pggan.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace synthaug::pggan {

namespace {

using V = ad::Var<float>;

V lrelu(const V& x) { return ad::leaky_relu(x, 0.2f); }

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double mean_of(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

std::vector<double> to_doubles(const Tensor& t) { return {t.storage().begin(), t.storage().end()}; }

// Clears requires_grad on a parameter set for its lifetime, restoring the previous flags.
class FreezeGuard {
public:
    explicit FreezeGuard(std::span<const V> params) {
        for (const auto& p : params) {
            saved_.emplace_back(p.node(), p.node()->requires_grad);
            p.node()->requires_grad = false;
        }
    }
    ~FreezeGuard() {
        for (auto& [node, flag] : saved_) node->requires_grad = flag;
    }
    FreezeGuard(const FreezeGuard&) = delete;
    FreezeGuard& operator=(const FreezeGuard&) = delete;

private:
    std::vector<std::pair<std::shared_ptr<ad::Node<float>>, bool>> saved_;
};

std::vector<V> all_params(const ParamStore<float>& store) {
    std::vector<V> out;
    for (const auto& e : store.params()) out.push_back(e.var);
    return out;
}

Tensor cat_batch(const Tensor& a, const Tensor& b) {
    Shape s = a.shape();
    s[0] += b.dim(0);
    std::vector<float> data(a.storage());
    data.insert(data.end(), b.storage().begin(), b.storage().end());
    return Tensor(s, std::move(data));
}

Tensor gather(const Tensor& images, std::span<const std::size_t> idx) {
    Shape s = images.shape();
    const auto per = static_cast<std::size_t>(images.size() / images.dim(0));
    s[0] = static_cast<std::int64_t>(idx.size());
    Tensor out(s);
    for (std::size_t k = 0; k < idx.size(); ++k) {
        std::copy_n(images.storage().begin() + static_cast<std::ptrdiff_t>(idx[k] * per), per,
                    out.storage().begin() + static_cast<std::ptrdiff_t>(k * per));
    }
    return out;
}

bool is_level_resolution(int r) {
    if (r < 4) return false;
    while (r > 4) {
        if (r % 2 != 0) return false;
        r /= 2;
    }
    return r == 4;
}

} // namespace

std::string to_string(LossMode m) { return m == LossMode::logistic ? "logistic" : "wasserstein"; }

LossMode loss_mode_from_string(const std::string& s) {
    if (s == "logistic") return LossMode::logistic;
    if (s == "wasserstein") return LossMode::wasserstein;
    throw std::invalid_argument("unknown GAN loss mode '" + s + "'");
}

int GanConfig::filters_at(int resolution) const {
    if (auto it = filters_by_resolution.find(resolution); it != filters_by_resolution.end()) return it->second;
    return resolution < 64 ? 128 : 64;
}

int GanConfig::levels() const {
    int n = 1;
    for (int r = 4; r < target_resolution; r *= 2) ++n;
    return n;
}

void GanConfig::validate() const {
    if (latent_dim < 2) throw std::invalid_argument("latent_dim must be >= 2");
    if (batch_size < 2) throw std::invalid_argument("batch_size must be >= 2");
    if (!is_level_resolution(target_resolution)) throw std::invalid_argument("target_resolution must be 4 * 2^k");
    if (steps_per_stage < 2) throw std::invalid_argument("steps_per_stage must be >= 2");
    if (channels < 1) throw std::invalid_argument("channels must be >= 1");
    if (!(lr > 0.0)) throw std::invalid_argument("lr must be positive");
    if (gp_lambda < 0.0) throw std::invalid_argument("gp_lambda must be >= 0");
    for (int r = 4; r <= target_resolution; r *= 2) {
        if (filters_at(r) < 1) throw std::invalid_argument("filter count must be positive at resolution " + std::to_string(r));
    }
}

void LossTrace::write_csv(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "step,stage,alpha,d_loss,g_loss\n";
    char buf[160];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%lld,%d,%.17g,%.17g,%.17g\n", static_cast<long long>(r.step), r.stage, r.alpha,
                      r.d_loss, r.g_loss);
        out << buf;
    }
    if (!out) throw std::runtime_error("failed writing " + path.string());
}

double equalized_scale(std::int64_t fan_in) {
    if (fan_in <= 0) throw std::invalid_argument("equalized layer needs fan_in > 0");
    return std::sqrt(2.0 / static_cast<double>(fan_in));
}

// ---- generator ----

Generator::Generator(const GanConfig& cfg, RngStream& init) : cfg_(cfg) {
    cfg_.validate();
    const int f0 = cfg_.filters_at(4);
    input_ = {store_.add("g.input.weight", {f0 * 16, cfg_.latent_dim}), store_.add("g.input.bias", {f0 * 16})};
    init::normal(input_.weight.mutable_value(), init, 1.0);
    base_conv_ = make_conv("g.base", f0, f0, 3, init);
    to_rgb_.push_back(make_conv("g.to_rgb0", f0, cfg_.channels, 1, init));
}

EqualizedConv<float> Generator::make_conv(const std::string& name, int cin, int cout, int k, RngStream& init) {
    EqualizedConv<float> c{store_.add(name + ".weight", {cout, cin, k, k}), store_.add(name + ".bias", {cout}), k / 2};
    init::normal(c.weight.mutable_value(), init, 1.0);
    return c;
}

void Generator::grow(RngStream& init) {
    if (resolution() >= cfg_.target_resolution) {
        throw std::logic_error("generator already at target resolution " + std::to_string(cfg_.target_resolution));
    }
    const int level = levels();
    const int cin = cfg_.filters_at(resolution());
    const int cout = cfg_.filters_at(resolution() * 2);
    const std::string p = "g.block" + std::to_string(level);
    Block b{make_conv(p + ".conv1", cin, cout, 3, init), make_conv(p + ".conv2", cout, cout, 3, init)};
    blocks_.push_back(b);
    to_rgb_.push_back(make_conv("g.to_rgb" + std::to_string(level), cout, cfg_.channels, 1, init));
}

V Generator::trunk(const V& z, V* prev) const {
    if (z.shape().size() != 2 || z.shape()[1] != cfg_.latent_dim) {
        throw ShapeError("generator latent must be [N, " + std::to_string(cfg_.latent_dim) + "], got " +
                         shape_to_string(z.shape()));
    }
    const int f0 = cfg_.filters_at(4);
    V h = lrelu(ad::reshape(input_(z), {z.shape()[0], f0, 4, 4}));
    h = lrelu(base_conv_(h));
    for (const auto& b : blocks_) {
        if (prev) *prev = h;
        h = lrelu(b.conv2(lrelu(b.conv1(ad::upsample_nearest2(h)))));
    }
    return h;
}

Generator::Paths Generator::forward_paths(const V& z) const {
    V prev;
    V h = trunk(z, &prev);
    Paths out;
    out.new_path = ad::tanh(to_rgb_.back()(h));
    if (prev.defined()) out.old_path = ad::upsample_nearest2(ad::tanh(to_rgb_[to_rgb_.size() - 2](prev)));
    return out;
}

V Generator::forward(const V& z, double alpha) const {
    if (alpha < 0.0 || alpha > 1.0) throw std::invalid_argument("fade alpha outside [0, 1]");
    // The old path is only evaluated while it carries weight.
    if (blocks_.empty() || alpha == 1.0) return ad::tanh(to_rgb_.back()(trunk(z, nullptr)));
    auto p = forward_paths(z);
    return fade_blend(p.new_path, p.old_path, alpha);
}

Tensor Generator::sample(std::int64_t count, RngStream& rng, double alpha) const {
    if (count < 1) throw std::invalid_argument("sample count must be >= 1");
    ad::NoGradGuard guard;
    Tensor z({count, cfg_.latent_dim});
    rng.fill_normal<float>(z.data());
    return forward(V::constant(std::move(z)), alpha).value();
}

// ---- discriminator ----

Discriminator::Discriminator(const GanConfig& cfg, RngStream& init) : cfg_(cfg) {
    cfg_.validate();
    const int f0 = cfg_.filters_at(4);
    from_rgb_.push_back(make_conv("d.from_rgb0", cfg_.channels, f0, 1, init));
    final_conv_ = make_conv("d.final", f0, f0, 3, init);
    dense_ = {store_.add("d.dense.weight", {f0, f0 * 16}), store_.add("d.dense.bias", {f0})};
    init::normal(dense_.weight.mutable_value(), init, 1.0);
    out_ = {store_.add("d.out.weight", {1, f0}), store_.add("d.out.bias", {1})};
    init::normal(out_.weight.mutable_value(), init, 1.0);
}

EqualizedConv<float> Discriminator::make_conv(const std::string& name, int cin, int cout, int k, RngStream& init) {
    EqualizedConv<float> c{store_.add(name + ".weight", {cout, cin, k, k}), store_.add(name + ".bias", {cout}), k / 2};
    init::normal(c.weight.mutable_value(), init, 1.0);
    return c;
}

void Discriminator::grow(RngStream& init) {
    if (resolution() >= cfg_.target_resolution) {
        throw std::logic_error("discriminator already at target resolution " + std::to_string(cfg_.target_resolution));
    }
    const int level = levels();
    const int fout = cfg_.filters_at(resolution());
    const int fin = cfg_.filters_at(resolution() * 2);
    const std::string p = "d.block" + std::to_string(level);
    Block b{make_conv(p + ".conv1", fin, fin, 3, init), make_conv(p + ".conv2", fin, fout, 3, init)};
    blocks_.push_back(b);
    from_rgb_.push_back(make_conv("d.from_rgb" + std::to_string(level), cfg_.channels, fin, 1, init));
}

V Discriminator::from_rgb(int level, const V& x) const { return lrelu(from_rgb_[static_cast<std::size_t>(level)](x)); }

V Discriminator::forward(const V& x, double alpha) const {
    const auto& s = x.shape();
    if (s.size() != 4 || s[1] != cfg_.channels || s[2] != resolution() || s[3] != resolution()) {
        throw ShapeError("discriminator expects [N, " + std::to_string(cfg_.channels) + ", " +
                         std::to_string(resolution()) + ", " + std::to_string(resolution()) + "], got " +
                         shape_to_string(s));
    }
    if (alpha < 0.0 || alpha > 1.0) throw std::invalid_argument("fade alpha outside [0, 1]");
    auto block = [](const Block& b, const V& h) { return ad::avg_pool2(lrelu(b.conv2(lrelu(b.conv1(h))))); };

    const int top = levels() - 1;
    V h = from_rgb(top, x);
    if (top > 0) {
        h = block(blocks_.back(), h);
        if (alpha < 1.0) h = fade_blend(h, from_rgb(top - 1, ad::avg_pool2(x)), alpha);
        for (int k = top - 1; k >= 1; --k) h = block(blocks_[static_cast<std::size_t>(k - 1)], h);
    }
    h = lrelu(final_conv_(h));
    h = lrelu(dense_(ad::flatten(h)));
    return out_(h);
}

ProgressiveStage grow_stage(Generator& gen, Discriminator& disc, const ProgressiveStage& stage, RngStream& init) {
    if (stage.fade_alpha != 1.0) throw std::logic_error("cannot grow before the current fade-in completes");
    if (gen.resolution() != stage.resolution || disc.resolution() != stage.resolution) {
        throw std::logic_error("networks and stage disagree on resolution");
    }
    gen.grow(init);
    disc.grow(init);
    return {stage.resolution * 2, 0.0, 0};
}

double stage_alpha(int stage_index, std::int64_t step, std::int64_t steps_per_stage) {
    if (stage_index == 0) return 1.0;
    const std::int64_t half = std::max<std::int64_t>(steps_per_stage / 2, 1);
    if (step >= half) return 1.0;
    return static_cast<double>(step) / static_cast<double>(half);
}

// ---- losses ----

GanLosses gan_loss(std::span<const double> d_real, std::span<const double> d_fake, LossMode mode, bool non_saturating,
                   double penalty) {
    if (d_real.empty() || d_fake.empty()) throw std::invalid_argument("gan_loss needs nonempty score batches");
    if (mode == LossMode::wasserstein) {
        const double mf = mean_of(d_fake);
        return {mf - mean_of(d_real) + penalty, -mf};
    }
    if (penalty != 0.0) throw std::invalid_argument("gradient penalty applies to the wasserstein loss only");
    auto check = [](std::span<const double> p) {
        for (double v : p) {
            if (!(v > 0.0 && v < 1.0)) throw std::domain_error("logistic loss needs probabilities in (0, 1)");
        }
    };
    check(d_real);
    check(d_fake);
    double log_real = 0.0, log_not_fake = 0.0, log_fake = 0.0;
    for (double p : d_real) log_real += std::log(p);
    for (double p : d_fake) {
        log_not_fake += std::log1p(-p);
        log_fake += std::log(p);
    }
    const double nr = static_cast<double>(d_real.size()), nf = static_cast<double>(d_fake.size());
    const double g = non_saturating ? -log_fake / nf : log_not_fake / nf;
    return {log_real / nr + log_not_fake / nf, g};
}

GanLosses gan_loss_from_logits(std::span<const double> real_logits, std::span<const double> fake_logits, LossMode mode,
                               bool non_saturating, double penalty) {
    if (mode == LossMode::wasserstein) return gan_loss(real_logits, fake_logits, mode, non_saturating, penalty);
    if (real_logits.empty() || fake_logits.empty()) throw std::invalid_argument("gan_loss needs nonempty score batches");
    if (penalty != 0.0) throw std::invalid_argument("gradient penalty applies to the wasserstein loss only");
    // log sigmoid(x) = -softplus(-x), log(1 - sigmoid(x)) = -softplus(x)
    double log_real = 0.0, log_not_fake = 0.0, log_fake = 0.0;
    for (double x : real_logits) log_real -= softplus(-x);
    for (double x : fake_logits) {
        log_not_fake -= softplus(x);
        log_fake -= softplus(-x);
    }
    const double nr = static_cast<double>(real_logits.size()), nf = static_cast<double>(fake_logits.size());
    const double g = non_saturating ? -log_fake / nf : log_not_fake / nf;
    return {log_real / nr + log_not_fake / nf, g};
}

V discriminator_objective(const V& real_scores, const V& fake_scores, LossMode mode) {
    if (mode == LossMode::wasserstein) return ad::sub(ad::mean(fake_scores), ad::mean(real_scores));
    // -(mean log D(x) + mean log(1 - D(G(z))))
    return ad::add(ad::mean(ad::softplus(ad::scale(real_scores, -1.0f))), ad::mean(ad::softplus(fake_scores)));
}

V generator_objective(const V& fake_scores, LossMode mode, bool non_saturating) {
    if (mode == LossMode::wasserstein) return ad::scale(ad::mean(fake_scores), -1.0f);
    if (non_saturating) return ad::mean(ad::softplus(ad::scale(fake_scores, -1.0f)));
    return ad::scale(ad::mean(ad::softplus(fake_scores)), -1.0f);
}

GradientPenalty gradient_penalty(const Critic& critic, std::span<const V> critic_params, const Tensor& real,
                                 const Tensor& fake, RngStream& rng, double lambda, double fd_step) {
    if (real.shape() != fake.shape() || real.rank() < 2) {
        throw ShapeError("gradient penalty needs matching batches, got " + shape_to_string(real.shape()) + " and " +
                         shape_to_string(fake.shape()));
    }
    if (!(fd_step > 0.0)) throw std::invalid_argument("fd_step must be positive");
    const std::int64_t n = real.dim(0);
    const auto per = static_cast<std::size_t>(real.size() / n);

    Tensor interp(real.shape());
    for (std::int64_t i = 0; i < n; ++i) {
        const double u = rng.uniform();
        for (std::size_t j = 0; j < per; ++j) {
            const std::size_t k = static_cast<std::size_t>(i) * per + j;
            interp[k] = static_cast<float>(u * real[k] + (1.0 - u) * fake[k]);
        }
    }

    Tensor grad;
    {
        FreezeGuard freeze(critic_params);
        auto x = V::parameter(interp);
        ad::backward(ad::sum(critic(x)));
        grad = x.grad();
    }

    GradientPenalty out;
    out.grad_norms.resize(static_cast<std::size_t>(n));
    Shape both = real.shape();
    both[0] = 2 * n;
    Tensor probes(both);
    Tensor weights({2 * n, 1});
    for (std::int64_t i = 0; i < n; ++i) {
        const std::size_t base = static_cast<std::size_t>(i) * per;
        double sq = 0.0;
        for (std::size_t j = 0; j < per; ++j) sq += static_cast<double>(grad[base + j]) * grad[base + j];
        const double norm = std::sqrt(sq);
        out.grad_norms[static_cast<std::size_t>(i)] = norm;
        out.value += (norm - 1.0) * (norm - 1.0);
        const double inv = norm > 0.0 ? 1.0 / norm : 0.0;
        for (std::size_t j = 0; j < per; ++j) {
            const double d = fd_step * grad[base + j] * inv;
            probes[base + j] = static_cast<float>(interp[base + j] + d);
            probes[static_cast<std::size_t>(n) * per + base + j] = static_cast<float>(interp[base + j] - d);
        }
        // d/dtheta lambda/n (norm - 1)^2 = 2 lambda/n (norm - 1) d/dtheta norm
        const double c = 2.0 * lambda * (norm - 1.0) / static_cast<double>(n) / (2.0 * fd_step);
        weights[static_cast<std::size_t>(i)] = norm > 0.0 ? static_cast<float>(c) : 0.0f;
        weights[static_cast<std::size_t>(n + i)] = norm > 0.0 ? static_cast<float>(-c) : 0.0f;
    }
    out.value *= lambda / static_cast<double>(n);
    out.surrogate = ad::sum(ad::mul(critic(V::constant(std::move(probes))), V::constant(std::move(weights))));
    return out;
}

// ---- training ----

PgganResult train_pggan(const Tensor& images, const GanConfig& cfg, RngStream& rng) {
    cfg.validate();
    const int s = cfg.target_resolution;
    if (images.rank() != 4 || images.dim(1) != cfg.channels || images.dim(2) != s || images.dim(3) != s) {
        throw ShapeError("train_pggan expects [N, " + std::to_string(cfg.channels) + ", " + std::to_string(s) + ", " +
                         std::to_string(s) + "] images, got " + shape_to_string(images.shape()));
    }
    const auto n_images = static_cast<std::size_t>(images.dim(0));
    if (n_images < static_cast<std::size_t>(cfg.batch_size)) {
        throw std::invalid_argument("dataset has " + std::to_string(n_images) + " images, fewer than batch size " +
                                    std::to_string(cfg.batch_size));
    }

    RngStream init = rng.derive(1);
    RngStream data = rng.derive(2);
    RngStream noise = rng.derive(3);

    // Real images at every level, coarsest first.
    const int levels = cfg.levels();
    std::vector<Tensor> pyramid(static_cast<std::size_t>(levels));
    pyramid.back() = images;
    {
        ad::NoGradGuard guard;
        for (int l = levels - 2; l >= 0; --l) {
            pyramid[static_cast<std::size_t>(l)] =
                ad::avg_pool2(V::constant(pyramid[static_cast<std::size_t>(l + 1)])).value();
        }
    }

    Generator gen(cfg, init);
    Discriminator disc(cfg, init);
    ProgressiveStage stage;
    PgganResult result;
    const auto batch = static_cast<std::size_t>(cfg.batch_size);
    const bool use_gp = cfg.loss_mode == LossMode::wasserstein && cfg.gp_lambda > 0.0;
    std::int64_t global_step = 0;

    for (int level = 0; level < levels; ++level) {
        if (level > 0) stage = grow_stage(gen, disc, stage, init);
        Adam g_opt(gen.params().trainable_params(), cfg.lr, cfg.adam);
        Adam d_opt(disc.params().trainable_params(), cfg.lr, cfg.adam);
        const auto d_params = all_params(disc.params());

        for (std::int64_t i = 0; i < cfg.steps_per_stage; ++i) {
            const double alpha = stage_alpha(level, i, cfg.steps_per_stage);
            stage.fade_alpha = alpha;
            stage.steps_in_stage = i + 1;
            const auto critic = [&](const V& x) { return disc.forward(x, alpha); };

            std::vector<std::size_t> idx(batch);
            for (auto& k : idx) k = static_cast<std::size_t>(data.below(n_images));
            Tensor real = gather(pyramid[static_cast<std::size_t>(level)], idx);
            if (alpha < 1.0) {
                ad::NoGradGuard guard;
                auto low = ad::upsample_nearest2(V::constant(gather(pyramid[static_cast<std::size_t>(level - 1)], idx)));
                real = fade_blend(V::constant(real), low, alpha).value();
            }

            // Discriminator step.
            d_opt.zero_grad();
            Tensor z({cfg.batch_size, cfg.latent_dim});
            noise.fill_normal<float>(z.data());
            Tensor fake;
            {
                ad::NoGradGuard guard;
                fake = gen.forward(V::constant(z), alpha).value();
            }
            GradientPenalty gp;
            if (use_gp) gp = gradient_penalty(critic, d_params, real, fake, noise, cfg.gp_lambda);
            auto scores = critic(V::constant(cat_batch(real, fake)));
            auto real_scores = ad::slice_batch(scores, 0, cfg.batch_size);
            auto fake_scores = ad::slice_batch(scores, cfg.batch_size, cfg.batch_size);
            auto d_obj = discriminator_objective(real_scores, fake_scores, cfg.loss_mode);
            if (gp.surrogate.defined()) d_obj = ad::add(d_obj, gp.surrogate);
            ad::backward(d_obj);
            const auto real_logits = to_doubles(real_scores.value());
            const auto d_losses = gan_loss_from_logits(real_logits, to_doubles(fake_scores.value()), cfg.loss_mode,
                                                       cfg.non_saturating, gp.value);

            LossRow row{global_step, stage.resolution, alpha, d_losses.d_loss, 0.0};
            if (!std::isfinite(row.d_loss) || !d_obj.value().all_finite()) {
                result.trace.append(row);
                throw TrainingAborted("non-finite discriminator loss at step " + std::to_string(global_step),
                                      result.trace);
            }
            d_opt.step();

            // Generator step; the discriminator is frozen so only generator weights get gradients.
            g_opt.zero_grad();
            noise.fill_normal<float>(z.data());
            V g_obj;
            Tensor g_fake_scores;
            {
                FreezeGuard freeze(d_params);
                auto s_fake = critic(gen.forward(V::constant(z), alpha));
                g_obj = generator_objective(s_fake, cfg.loss_mode, cfg.non_saturating);
                ad::backward(g_obj);
                g_fake_scores = s_fake.value();
            }
            row.g_loss = gan_loss_from_logits(real_logits, to_doubles(g_fake_scores), cfg.loss_mode, cfg.non_saturating)
                             .g_loss;
            result.trace.append(row);
            if (!std::isfinite(row.g_loss)) {
                throw TrainingAborted("non-finite generator loss at step " + std::to_string(global_step), result.trace);
            }
            g_opt.step();
            ++global_step;
        }
    }
    result.generator = gen.params().entries();
    return result;
}

PgganResult train_pggan(const LabeledDataset& class_dataset, const GanConfig& cfg, RngStream& rng) {
    if (class_dataset.empty()) throw std::invalid_argument("train_pggan: empty dataset");
    const int label = class_dataset[0].label;
    for (const auto& s : class_dataset.samples()) {
        if (s.label != label) throw std::invalid_argument("train_pggan: dataset mixes classes (record '" + s.id + "')");
    }
    return train_pggan(class_dataset.images(), cfg, rng);
}

Generator load_generator(const GanConfig& cfg, const std::vector<NamedTensor>& entries) {
    RngStream scratch(0, 0);
    Generator g(cfg, scratch);
    while (g.resolution() < cfg.target_resolution) g.grow(scratch);
    g.params().load(entries);
    return g;
}

} // namespace synthaug::pggan
