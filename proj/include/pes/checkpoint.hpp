#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "pes/config.hpp"
#include "pes/losses.hpp"
#include "pes/network.hpp"
#include "pes/optim.hpp"

namespace pes {

static_assert(std::endian::native == std::endian::little,
              "checkpoint files store raw little-endian float32");

struct CheckpointMeta {
  int epoch_next = 0;  // epochs already completed; training resumes here
  double best_val = -1.0;
  int best_epoch = -1;
  long step_count = 0;
  int skipped_steps = 0;
};

namespace detail {

inline constexpr char kCkptMagic[8] = {'P', 'E', 'S', 'C', 'K', 'P', 'T', '1'};

inline void write_f32(std::ofstream& out, const Tensor<float>& t) {
  out.write(reinterpret_cast<const char*>(t.data()),
            static_cast<std::streamsize>(t.numel() * sizeof(float)));
}

inline void read_f32(std::ifstream& in, Tensor<float>& t,
                     const std::string& what) {
  in.read(reinterpret_cast<char*>(t.data()),
          static_cast<std::streamsize>(t.numel() * sizeof(float)));
  check_runtime(in.gcount() ==
                    static_cast<std::streamsize>(t.numel() * sizeof(float)),
                "checkpoint truncated while reading " + what);
}

inline nlohmann::json model_spec_to_json(const ModelSpec& ms) {
  nlohmann::json b;
  b["widths"] = ms.backbone.widths;
  b["blocks"] = ms.backbone.blocks;
  b["strides"] = ms.backbone.strides;
  b["bottleneck_ratio"] = ms.backbone.bottleneck_ratio;
  b["astrm"] = ms.backbone.use_astrm;
  b["astrm_kernel_t"] = ms.backbone.astrm_kernel_t;
  b["astrm_ratio_t"] = ms.backbone.astrm_ratio_t;
  b["astrm_ratio_g"] = ms.backbone.astrm_ratio_g;
  b["in_channels"] = ms.backbone.in_channels;
  nlohmann::json j;
  j["backbone"] = std::move(b);
  j["temporal"] = temporal_kind_name(ms.temporal);
  j["temporal_hidden"] = ms.temporal_hidden;
  j["num_classes"] = ms.num_classes;
  j["clip_len"] = ms.clip_len;
  j["embed_dim"] = ms.embed_dim;
  return j;
}

inline ModelSpec model_spec_from_json(const nlohmann::json& j) {
  ModelSpec ms;
  try {
    const nlohmann::json& b = j.at("backbone");
    ms.backbone.widths = b.at("widths").get<std::vector<int>>();
    ms.backbone.blocks = b.at("blocks").get<std::vector<int>>();
    ms.backbone.strides = b.at("strides").get<std::vector<int>>();
    ms.backbone.bottleneck_ratio = b.at("bottleneck_ratio").get<int>();
    ms.backbone.use_astrm = b.at("astrm").get<bool>();
    ms.backbone.astrm_kernel_t = b.at("astrm_kernel_t").get<int>();
    ms.backbone.astrm_ratio_t = b.at("astrm_ratio_t").get<int>();
    ms.backbone.astrm_ratio_g = b.at("astrm_ratio_g").get<int>();
    ms.backbone.in_channels = b.at("in_channels").get<int>();
    ms.temporal = parse_temporal_kind(j.at("temporal").get<std::string>());
    ms.temporal_hidden = j.at("temporal_hidden").get<int>();
    ms.num_classes = j.at("num_classes").get<int>();
    ms.clip_len = j.at("clip_len").get<int>();
    ms.embed_dim = j.at("embed_dim").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw RuntimeFailure(std::string("corrupt checkpoint header: ") + e.what());
  }
  return ms;
}

}  // namespace detail

// Serializes everything a deterministic resume needs: weights, normalization
// statistics, optimizer moments, the memory bank with entry order, and the
// progress counters.  Layout: magic, u64 header length, JSON header, then raw
// float32 tensors in the order the header declares.
inline void save_checkpoint(const std::filesystem::path& path,
                            Model<float>& model, const AdamW<float>* adam,
                            const MemoryBank<float>* bank, int bank_capacity,
                            const CheckpointMeta& meta) {
  nlohmann::json header;
  header["model"] = detail::model_spec_to_json(model.spec);
  header["epoch_next"] = meta.epoch_next;
  header["best_val"] = meta.best_val;
  header["best_epoch"] = meta.best_epoch;
  header["step_count"] = meta.step_count;
  header["skipped_steps"] = meta.skipped_steps;

  auto params = model.parameters();
  nlohmann::json plist = nlohmann::json::array();
  for (const Parameter<float>* p : params)
    plist.push_back({{"name", p->name}, {"shape", p->value.shape()}});
  header["params"] = std::move(plist);

  auto bns = model.bn_buffers();
  nlohmann::json blist = nlohmann::json::array();
  for (const auto& [name, buf] : bns)
    blist.push_back({{"name", name}, {"channels", buf->running_mean.dim(0)}});
  header["bn"] = std::move(blist);

  header["adam"] = adam != nullptr;
  if (adam)
    check_runtime(adam->slots().size() == params.size(),
                  "optimizer slot count does not match the parameter list");

  if (bank) {
    nlohmann::json entries = nlohmann::json::array();
    for (int c = 0; c < bank->num_classes(); ++c)
      for (const auto& e : bank->entries(c))
        entries.push_back({c, e.w});
    header["bank"] = {{"total_capacity", bank_capacity},
                      {"dim", model.spec.embed_dim},
                      {"entries", std::move(entries)}};
  }

  std::string hs = header.dump();
  std::ofstream out(path, std::ios::binary);
  check_runtime(out.good(), "cannot write checkpoint " + path.string());
  out.write(detail::kCkptMagic, sizeof(detail::kCkptMagic));
  std::uint64_t len = hs.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(hs.data(), static_cast<std::streamsize>(hs.size()));

  for (const Parameter<float>* p : params) detail::write_f32(out, p->value);
  for (const auto& [name, buf] : bns) {
    detail::write_f32(out, buf->running_mean);
    detail::write_f32(out, buf->running_var);
  }
  if (adam)
    for (const auto& slot : adam->slots()) {
      detail::write_f32(out, slot.m);
      detail::write_f32(out, slot.v);
    }
  if (bank)
    for (int c = 0; c < bank->num_classes(); ++c)
      for (const auto& e : bank->entries(c)) {
        Tensor<float> z({static_cast<int>(e.z.size())});
        std::copy(e.z.begin(), e.z.end(), z.data());
        detail::write_f32(out, z);
      }
  check_runtime(out.good(), "short write to checkpoint " + path.string());
}

struct LoadedCheckpoint {
  Model<float> model;
  CheckpointMeta meta;
  bool has_adam = false;
  std::vector<AdamW<float>::Slot> adam_slots;
  bool has_bank = false;
  int bank_capacity = 0;
  MemoryBank<float> bank;
};

inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  check_runtime(in.good(), "cannot open checkpoint " + path.string());

  char magic[sizeof(detail::kCkptMagic)];
  in.read(magic, sizeof(magic));
  check_runtime(in.gcount() == sizeof(magic) &&
                    std::memcmp(magic, detail::kCkptMagic, sizeof(magic)) == 0,
                path.string() + " is not a checkpoint file");
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  check_runtime(in.gcount() == sizeof(len) && len > 0 && len < (1u << 30),
                "corrupt checkpoint header length");
  std::string hs(len, '\0');
  in.read(hs.data(), static_cast<std::streamsize>(len));
  check_runtime(in.gcount() == static_cast<std::streamsize>(len),
                "checkpoint truncated in header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(hs);
  } catch (const nlohmann::json::exception& e) {
    throw RuntimeFailure(std::string("corrupt checkpoint header: ") + e.what());
  }

  ModelSpec spec = detail::model_spec_from_json(header.at("model"));
  LoadedCheckpoint lc{Model<float>(spec, 0), CheckpointMeta{}, false, {}, false,
                      0, MemoryBank<float>()};
  try {
    lc.meta.epoch_next = header.at("epoch_next").get<int>();
    lc.meta.best_val = header.at("best_val").get<double>();
    lc.meta.best_epoch = header.at("best_epoch").get<int>();
    lc.meta.step_count = header.at("step_count").get<long>();
    lc.meta.skipped_steps = header.at("skipped_steps").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw RuntimeFailure(std::string("corrupt checkpoint header: ") + e.what());
  }

  auto params = lc.model.parameters();
  const nlohmann::json& plist = header.at("params");
  check_runtime(plist.size() == params.size(),
                "checkpoint parameter list does not match the model");
  for (std::size_t i = 0; i < params.size(); ++i) {
    check_runtime(plist[i].at("name").get<std::string>() == params[i]->name &&
                      plist[i].at("shape").get<std::vector<int>>() ==
                          params[i]->value.shape(),
                  "checkpoint parameter " + params[i]->name +
                      " does not match the model");
    detail::read_f32(in, params[i]->value, params[i]->name);
    params[i]->zero_grad();
  }

  auto bns = lc.model.bn_buffers();
  const nlohmann::json& blist = header.at("bn");
  check_runtime(blist.size() == bns.size(),
                "checkpoint normalization list does not match the model");
  for (std::size_t i = 0; i < bns.size(); ++i) {
    check_runtime(blist[i].at("name").get<std::string>() == bns[i].first,
                  "checkpoint normalization buffers do not match the model");
    detail::read_f32(in, bns[i].second->running_mean, bns[i].first + ".mean");
    detail::read_f32(in, bns[i].second->running_var, bns[i].first + ".var");
  }

  lc.has_adam = header.at("adam").get<bool>();
  if (lc.has_adam) {
    lc.adam_slots.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      lc.adam_slots[i].m = Tensor<float>(params[i]->value.shape());
      lc.adam_slots[i].v = Tensor<float>(params[i]->value.shape());
      detail::read_f32(in, lc.adam_slots[i].m, params[i]->name + ".m");
      detail::read_f32(in, lc.adam_slots[i].v, params[i]->name + ".v");
    }
  }

  if (header.contains("bank")) {
    const nlohmann::json& bj = header.at("bank");
    lc.has_bank = true;
    lc.bank_capacity = bj.at("total_capacity").get<int>();
    int dim = bj.at("dim").get<int>();
    check_runtime(dim == spec.embed_dim,
                  "checkpoint bank dimension does not match the model");
    lc.bank = MemoryBank<float>(spec.num_classes, lc.bank_capacity);
    for (const auto& entry : bj.at("entries")) {
      int c = entry.at(0).get<int>();
      float w = entry.at(1).get<float>();
      Tensor<float> z({dim});
      detail::read_f32(in, z, "bank entry");
      lc.bank.push(std::vector<float>(z.data(), z.data() + dim), c, w);
    }
  }

  return lc;
}

}  // namespace pes
