#include "mmfuse/expcli/ablation.hpp"

namespace mmfuse::expcli {

using fusion::EncoderVariant;
using fusion::Pooling;
using trainer::RunConfig;

namespace {

enum class Backbones { Both, ImagePatch, Object };

struct Axes {
  const char* id;
  EncoderVariant variant;
  Pooling pooling;
  bool align;
  bool contrastive;
  bool multi_task;
  Backbones backbones;
};

RunConfig apply(const RunConfig& base, const Axes& a) {
  RunConfig c = base;
  c.fusion.variant = a.variant;
  c.fusion.pooling = a.pooling;
  c.losses.align = a.align;
  c.losses.contrastive = a.contrastive;
  c.multi_task = a.multi_task;
  c.fusion.use_image_patch = a.backbones != Backbones::Object;
  c.fusion.use_object = a.backbones != Backbones::ImagePatch;
  return c;
}

constexpr auto kShared = EncoderVariant::Shared;
constexpr auto kMulti = EncoderVariant::Multi;

constexpr Axes k00{"00", kShared, Pooling::Cls, false, false, false, Backbones::Both};
constexpr Axes k01{"01", kShared, Pooling::None, false, false, false, Backbones::Both};
constexpr Axes k02{"02", kMulti, Pooling::None, false, false, false, Backbones::Both};
constexpr Axes k03{"03", kMulti, Pooling::TxtCls, false, false, false, Backbones::Both};
constexpr Axes k10{"10", kMulti, Pooling::None, true, false, false, Backbones::Both};
constexpr Axes k12{"12", kMulti, Pooling::None, false, true, false, Backbones::Both};
constexpr Axes k13{"13", kMulti, Pooling::None, true, true, false, Backbones::Both};
constexpr Axes k20{"20", kMulti, Pooling::None, true, false, false, Backbones::ImagePatch};
constexpr Axes k21{"21", kMulti, Pooling::None, true, false, false, Backbones::Object};
constexpr Axes k30{"30", kMulti, Pooling::None, true, false, true, Backbones::Both};

}  // namespace

std::vector<Experiment> ablation_round(int round, const RunConfig& base) {
  std::vector<Axes> grid;
  switch (round) {
    case 1: grid = {k00, k01, k02, k03}; break;
    case 2: grid = {k02, k10, k12, k13}; break;
    case 3: grid = {k10, k20, k21}; break;
    case 4: grid = {k10, k30}; break;
    default: throw fusion::ConfigError("ablation round must be 1..4, got " + std::to_string(round));
  }
  std::vector<Experiment> out;
  for (const Axes& a : grid) {
    Experiment e{a.id, apply(base, a)};
    if (a.multi_task) e.config.train.epochs *= 2;
    e.config.validate();
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace mmfuse::expcli
