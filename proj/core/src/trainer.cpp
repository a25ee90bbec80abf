#include "sparsefcn/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "sparsefcn/errors.hpp"
#include "sparsefcn/executor.hpp"
#include "sparsefcn/pipeline.hpp"
#include "sparsefcn/sparsity.hpp"

namespace sparsefcn {

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw ParameterError("train config: " + m); };
  if (!(lr > 0)) fail("lr must be positive");
  if (!(momentum >= 0 && momentum < 1)) fail("momentum must lie in [0, 1)");
  if (iterations < 1) fail("iterations must be at least 1");
  if (batch < 1) fail("batch must be at least 1");
  if (!(p > 0 && p < 1)) fail("p must lie in (0, 1)");
  if (!(lambda >= 0)) fail("lambda must be nonnegative");
  if (!(alpha >= 0 && alpha < 1)) fail("alpha must lie in [0, 1)");
  if (!(q0 > 0 && q0 < 1)) fail("q0 must lie in (0, 1)");
  if (!(aux_weight >= 0)) fail("aux_weight must be nonnegative");
  if (!(bootstrap_fraction > 0 && bootstrap_fraction <= 1)) fail("bootstrap_fraction must lie in (0, 1]");
  if (!(weight_decay >= 0)) fail("weight_decay must be nonnegative");
  if (!(clip_norm >= 0)) fail("clip_norm must be nonnegative");
}

PixelLoss softmax_pixel_loss(const Tensor& scores, const std::vector<int>& labels, int ignore_index) {
  const Dims d = scores.dims();
  const std::size_t plane = d.plane();
  if (labels.size() != static_cast<std::size_t>(d.n) * plane) {
    throw ParameterError("loss: " + std::to_string(labels.size()) + " labels for scores " + to_string(d));
  }
  PixelLoss r;
  r.grad = Tensor(d);
  r.per_pixel.assign(labels.size(), 0.0);
  const auto s = scores.data();
  auto g = r.grad.data();
  std::vector<double> prob(static_cast<std::size_t>(d.c));
  for (int n = 0; n < d.n; ++n) {
    for (std::size_t i = 0; i < plane; ++i) {
      const int label = labels[n * plane + i];
      if (label == ignore_index) continue;
      if (label < 0 || label >= d.c) {
        throw ParameterError("loss: label " + std::to_string(label) + " outside [0, " + std::to_string(d.c) + ")");
      }
      double m = s[scores.offset(n, 0, 0, 0) + i];
      for (int c = 1; c < d.c; ++c) m = std::max(m, s[scores.offset(n, c, 0, 0) + i]);
      double z = 0;
      for (int c = 0; c < d.c; ++c) {
        prob[c] = std::exp(s[scores.offset(n, c, 0, 0) + i] - m);
        z += prob[c];
      }
      r.per_pixel[n * plane + i] = std::log(z) - (s[scores.offset(n, label, 0, 0) + i] - m);
      for (int c = 0; c < d.c; ++c) g[scores.offset(n, c, 0, 0) + i] = prob[c] / z - (c == label ? 1.0 : 0.0);
      ++r.counted;
    }
  }
  if (r.counted == 0) throw UsageError("loss: every pixel is ignored");
  const double inv = 1.0 / static_cast<double>(r.counted);
  for (double v : r.per_pixel) r.loss += v;
  r.loss *= inv;
  for (double& v : g) v *= inv;
  return r;
}

std::vector<char> bootstrap_filter(const std::vector<double>& losses, int images, double fraction) {
  if (!(fraction > 0 && fraction <= 1)) throw ParameterError("bootstrap fraction must lie in (0, 1]");
  if (images < 1 || losses.size() % static_cast<std::size_t>(images) != 0) {
    throw ParameterError("bootstrap: pixel count not divisible by image count");
  }
  const std::size_t per = losses.size() / images;
  const auto keep_count = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(per) - 1e-9));
  std::vector<char> keep(losses.size(), 0);
  std::vector<std::size_t> order(per);
  for (int n = 0; n < images; ++n) {
    const std::size_t base = n * per;
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return losses[base + a] > losses[base + b]; });
    for (std::size_t k = 0; k < keep_count; ++k) keep[base + order[k]] = 1;
  }
  return keep;
}

std::vector<int> downsample_labels(const std::vector<int>& labels, int n, int h, int w, int factor) {
  if (factor < 1 || h % factor != 0 || w % factor != 0) {
    throw ParameterError("labels " + std::to_string(h) + "x" + std::to_string(w) + " not divisible by " +
                         std::to_string(factor));
  }
  if (labels.size() != static_cast<std::size_t>(n) * h * w) throw ParameterError("label map size mismatch");
  const int oh = h / factor;
  const int ow = w / factor;
  std::vector<int> out(static_cast<std::size_t>(n) * oh * ow);
  for (int b = 0; b < n; ++b) {
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x) {
        out[(static_cast<std::size_t>(b) * oh + y) * ow + x] =
            labels[(static_cast<std::size_t>(b) * h + y * factor + factor / 2) * w + x * factor + factor / 2];
      }
    }
  }
  return out;
}

namespace {

struct LossSettings {
  double p = 0.25;
  double lambda = 0;
  double alpha = 0.9;
  double q_prev = 0.5;
  double aux_weight = 0.4;
  double bootstrap_fraction = 1.0;
};

struct LossParts {
  IterationRecord record;
  std::vector<std::pair<int, Tensor>> seeds;
};

std::vector<int> loss_targets(const ModelGraph& g) {
  std::vector<int> t{g.require_output("main")};
  for (const char* role : {"aux_half", "aux_full", "s"}) {
    if (auto id = g.output(role)) t.push_back(*id);
  }
  return t;
}

PixelLoss head_loss(const Tensor& scores, const std::vector<int>& labels, double fraction) {
  PixelLoss l = softmax_pixel_loss(scores, labels);
  if (fraction >= 1.0) return l;
  const auto keep = bootstrap_filter(l.per_pixel, scores.dims().n, fraction);
  std::vector<int> filtered = labels;
  for (std::size_t i = 0; i < keep.size(); ++i) {
    if (!keep[i]) filtered[i] = kIgnoreLabel;
  }
  return softmax_pixel_loss(scores, filtered);
}

LossParts composite_loss(const ModelGraph& g, const Activations& a, const std::vector<int>& labels,
                         const LossSettings& s) {
  LossParts out;
  IterationRecord& rec = out.record;
  const int main = g.require_output("main");
  PixelLoss lm = head_loss(a.values[main], labels, s.bootstrap_fraction);
  rec.main = lm.loss;
  out.seeds.emplace_back(main, std::move(lm.grad));

  const std::vector<int> predicted = argmax_channels(a.values[main]);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) correct += predicted[i] == labels[i];
  rec.pixel_acc = static_cast<double>(correct) / static_cast<double>(labels.size());

  auto aux = [&](const char* role, double& slot) {
    const auto id = g.output(role);
    if (!id || s.aux_weight == 0.0) return;
    PixelLoss l = head_loss(a.values[*id], labels, s.bootstrap_fraction);
    slot = l.loss;
    for (double& v : l.grad.data()) v *= s.aux_weight;
    out.seeds.emplace_back(*id, std::move(l.grad));
  };
  aux("aux_half", rec.aux_half);
  aux("aux_full", rec.aux_full);

  rec.q = s.q_prev;
  if (const auto sid = g.output("s")) {
    const Tensor& logits = a.values[*sid];
    const auto rates = rate_per_image(logits);
    rec.rate = std::accumulate(rates.begin(), rates.end(), 0.0) / static_cast<double>(rates.size());
    const double unclamped = s.alpha * s.q_prev + (1.0 - s.alpha) * rec.rate;
    rec.q = update_q(s.q_prev, rec.rate, s.alpha);
    rec.penalty = sparsity_penalty(s.p, rec.q, s.lambda);
    const bool clamped = unclamped != rec.q;
    if (s.lambda > 0 && !clamped) {
      const Dims d = logits.dims();
      const double coef = sparsity_penalty_grad_q(s.p, rec.q, s.lambda) * (1.0 - s.alpha) /
                          (static_cast<double>(d.n) * static_cast<double>(d.c * d.plane()));
      Tensor gs(d);
      auto gv = gs.data();
      const auto sv = logits.data();
      for (std::size_t i = 0; i < gv.size(); ++i) {
        const double sg = sigmoid(sv[i]);
        gv[i] = coef * sg * (1.0 - sg);
      }
      out.seeds.emplace_back(*sid, std::move(gs));
    }
  }
  rec.loss = rec.main + s.aux_weight * (rec.aux_half + rec.aux_full) + rec.penalty;
  return out;
}

Tensor stack_images(const std::vector<SceneSample>& data, const std::vector<std::size_t>& picks,
                    std::vector<int>& labels) {
  const SceneSample& first = data[picks[0]];
  Tensor batch({static_cast<int>(picks.size()), 3, first.height, first.width});
  labels.clear();
  auto dst = batch.data();
  std::size_t pos = 0;
  for (std::size_t k : picks) {
    const SceneSample& s = data[k];
    if (s.height != first.height || s.width != first.width) throw ParameterError("training scenes differ in size");
    const auto src = s.image.data();
    std::copy(src.begin(), src.end(), dst.begin() + static_cast<std::ptrdiff_t>(pos));
    pos += src.size();
    labels.insert(labels.end(), s.labels.begin(), s.labels.end());
  }
  return batch;
}

}  // namespace

TrainResult train(ModelGraph& graph, const TrainConfig& cfg, const std::vector<SceneSample>& data,
                  const IterationCallback& on_iteration) {
  cfg.validate();
  if (data.empty()) throw UsageError("training needs at least one scene");
  const auto params = parameters(graph);
  std::vector<Tensor> velocity;
  velocity.reserve(params.size());
  for (const auto& p : params) velocity.emplace_back(param_tensor(graph, p).dims());

  const std::vector<int> targets = loss_targets(graph);
  const int main = graph.require_output("main");
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = order.size();

  TrainResult result;
  result.q = cfg.q0;
  LossSettings ls{cfg.p, cfg.lambda, cfg.alpha, cfg.q0, cfg.aux_weight, cfg.bootstrap_fraction};
  std::vector<int> labels_full;
  for (int it = 1; it <= cfg.iterations; ++it) {
    std::vector<std::size_t> picks;
    for (int b = 0; b < cfg.batch; ++b) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      picks.push_back(order[cursor++]);
    }
    const Tensor image = stack_images(data, picks, labels_full);
    ExecOptions opts;
    opts.phase = Phase::Train;
    Activations acts = forward(graph, image, std::move(opts), targets);
    const Dims sd = acts.values[main].dims();
    const Dims id = image.dims();
    const auto labels = downsample_labels(labels_full, id.n, id.h, id.w, id.h / sd.h);

    ls.q_prev = result.q;
    LossParts parts = composite_loss(graph, acts, labels, ls);
    parts.record.iteration = it;
    if (!std::isfinite(parts.record.loss)) throw DivergenceError("training loss is not finite", it);

    Gradients grads = backward(graph, acts, parts.seeds);
    double scale = 1.0;
    if (cfg.clip_norm > 0) {
      double sq = 0;
      for (const Tensor& gt : grads.params) {
        for (double v : gt.data()) sq += v * v;
      }
      const double norm = std::sqrt(sq);
      if (!std::isfinite(norm)) throw DivergenceError("gradient is not finite", it);
      if (norm > cfg.clip_norm) scale = cfg.clip_norm / norm;
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto w = param_tensor(graph, params[i]).data();
      auto v = velocity[i].data();
      const auto g = grads.params[i].data();
      for (std::size_t k = 0; k < w.size(); ++k) {
        const double step = scale * g[k] + cfg.weight_decay * w[k];
        v[k] = cfg.momentum * v[k] - cfg.lr * step;
        w[k] += v[k];
      }
    }
    apply_bn_statistics(graph, acts);
    result.q = parts.record.q;
    result.history.push_back(parts.record);
    if (on_iteration) on_iteration(parts.record);
  }
  return result;
}

std::string history_csv(const std::vector<IterationRecord>& history) {
  std::ostringstream os;
  os.precision(17);
  os << "iteration,loss,main,aux_half,aux_full,penalty,rate,q,pixel_acc\n";
  for (const auto& r : history) {
    os << r.iteration << ',' << r.loss << ',' << r.main << ',' << r.aux_half << ',' << r.aux_full << ','
       << r.penalty << ',' << r.rate << ',' << r.q << ',' << r.pixel_acc << '\n';
  }
  return os.str();
}

GradcheckResult gradcheck(const ModelGraph& graph, const Tensor& image, const std::vector<int>& labels,
                          const GradcheckOptions& o) {
  if (o.samples_per_tensor < 1 || !(o.step > 0)) throw ParameterError("gradcheck: bad sampling options");
  const std::vector<int> targets = loss_targets(graph);
  const int main = graph.require_output("main");
  const LossSettings ls{o.p, o.lambda, o.alpha, o.q_prev, o.aux_weight, 1.0};
  const Dims id = image.dims();

  std::vector<int> labels4;
  std::map<int, Tensor> pinned;
  auto evaluate = [&](const ModelGraph& g, Activations* keep) {
    ExecOptions opts;
    opts.phase = Phase::Train;
    opts.pinned = pinned;
    Activations a = forward(g, image, std::move(opts), targets);
    if (labels4.empty()) labels4 = downsample_labels(labels, id.n, id.h, id.w, id.h / a.values[main].dims().h);
    LossParts parts = composite_loss(g, a, labels4, ls);
    if (keep) *keep = std::move(a);
    return parts;
  };

  Activations acts;
  const LossParts base = evaluate(graph, &acts);
  const Gradients grads = backward(graph, acts, base.seeds);
  // Stop-gradient inputs are constants of the objective being differentiated.
  for (int id = 0; id < graph.size(); ++id) {
    if (graph.node(id).op == OpKind::StopGradient && acts.computed[id]) pinned.emplace(id, acts.values[id]);
  }

  ModelGraph probe = graph;
  const auto params = parameters(probe);
  std::mt19937_64 rng(o.seed);
  GradcheckResult r;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& t = param_tensor(probe, params[i]);
    std::uniform_int_distribution<std::size_t> pick(0, t.size() - 1);
    for (int k = 0; k < o.samples_per_tensor; ++k) {
      const std::size_t idx = pick(rng);
      const double orig = t.data()[idx];
      t.data()[idx] = orig + o.step;
      const double plus = evaluate(probe, nullptr).record.loss;
      t.data()[idx] = orig - o.step;
      const double minus = evaluate(probe, nullptr).record.loss;
      t.data()[idx] = orig;
      GradcheckEntry e;
      e.param = params[i].name;
      e.index = idx;
      e.analytic = grads.params[i].data()[idx];
      e.numeric = (plus - minus) / (2.0 * o.step);
      e.rel_error = std::abs(e.analytic - e.numeric) / std::max({std::abs(e.analytic), std::abs(e.numeric), 1e-6});
      r.max_rel_error = std::max(r.max_rel_error, e.rel_error);
      r.entries.push_back(std::move(e));
    }
  }
  return r;
}

}  // namespace sparsefcn
