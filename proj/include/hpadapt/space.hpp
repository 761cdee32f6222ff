/* Copyright 2026 The hpadapt Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

// Search space of per-block hyper-parameter groups and the discrete
// architecture that extraction produces from it.
//
// Groups are enumerated in a fixed canonical order: every encoder block
// contributes FD, AH, ADIM, CK; every decoder block contributes FD, AH,
// ADIM and, when decoder cross-attention is searched separately, XAH and
// XADIM. ArchLogits, mixing weights and DerivedArch all index groups by this
// order.

#include <algorithm>
#include <cstddef>
#include <string>
#include <vector>

#include "json.hpp"

#include "hpadapt/errors.hpp"
#include "hpadapt/rng.hpp"

namespace hpadapt {

using json = nlohmann::json;

enum class BlockKind { Encoder, Decoder };
enum class GroupKind { FD, AH, ADIM, CK, XAH, XADIM };

inline const char* group_kind_name(GroupKind k) {
  switch (k) {
    case GroupKind::FD: return "FD";
    case GroupKind::AH: return "AH";
    case GroupKind::ADIM: return "ADIM";
    case GroupKind::CK: return "CK";
    case GroupKind::XAH: return "XAH";
    case GroupKind::XADIM: return "XADIM";
  }
  return "?";
}

struct GroupSpec {
  BlockKind block_kind;
  std::size_t block;
  GroupKind kind;

  std::string name() const {
    return std::string(block_kind == BlockKind::Encoder ? "enc" : "dec") + "." +
           std::to_string(block) + "." + group_kind_name(kind);
  }
};

struct ArchSpace {
  std::vector<int> fd{512, 1024, 2048, 3072};
  std::vector<int> ah{2, 4, 8};
  std::vector<int> adim{16, 32, 64, 96};
  std::vector<int> ck{3, 5, 7};
  std::size_t d_model = 256;
  std::size_t encoder_blocks = 12;
  std::size_t decoder_blocks = 6;
  bool split_decoder_attention = false;

  bool operator==(const ArchSpace&) const = default;

  const std::vector<int>& choices(GroupKind k) const {
    switch (k) {
      case GroupKind::FD: return fd;
      case GroupKind::AH:
      case GroupKind::XAH: return ah;
      case GroupKind::ADIM:
      case GroupKind::XADIM: return adim;
      case GroupKind::CK: return ck;
    }
    return fd;
  }

  int max_choice(GroupKind k) const { return choices(k).back(); }
  int min_choice(GroupKind k) const { return choices(k).front(); }
  std::size_t max_attn_width() const {
    return static_cast<std::size_t>(ah.back()) * static_cast<std::size_t>(adim.back());
  }

  std::vector<GroupSpec> groups() const {
    std::vector<GroupSpec> g;
    for (std::size_t b = 0; b < encoder_blocks; ++b) {
      for (auto k : {GroupKind::FD, GroupKind::AH, GroupKind::ADIM, GroupKind::CK})
        g.push_back({BlockKind::Encoder, b, k});
    }
    for (std::size_t b = 0; b < decoder_blocks; ++b) {
      for (auto k : {GroupKind::FD, GroupKind::AH, GroupKind::ADIM})
        g.push_back({BlockKind::Decoder, b, k});
      if (split_decoder_attention) {
        g.push_back({BlockKind::Decoder, b, GroupKind::XAH});
        g.push_back({BlockKind::Decoder, b, GroupKind::XADIM});
      }
    }
    return g;
  }

  std::size_t groups_per_decoder_block() const {
    return split_decoder_attention ? 5 : 3;
  }

  std::size_t group_index(BlockKind bk, std::size_t block, GroupKind k) const {
    auto enc_slot = [](GroupKind g) -> std::size_t {
      switch (g) {
        case GroupKind::FD: return 0;
        case GroupKind::AH: return 1;
        case GroupKind::ADIM: return 2;
        case GroupKind::CK: return 3;
        default: break;
      }
      throw InvalidArgument("group_index: encoder blocks have no " +
                            std::string(group_kind_name(g)) + " group");
    };
    if (bk == BlockKind::Encoder) {
      if (block >= encoder_blocks) throw InvalidArgument("group_index: encoder block out of range");
      return block * 4 + enc_slot(k);
    }
    if (block >= decoder_blocks) throw InvalidArgument("group_index: decoder block out of range");
    if (!split_decoder_attention) {
      if (k == GroupKind::XAH) k = GroupKind::AH;
      if (k == GroupKind::XADIM) k = GroupKind::ADIM;
    }
    std::size_t slot = 0;
    switch (k) {
      case GroupKind::FD: slot = 0; break;
      case GroupKind::AH: slot = 1; break;
      case GroupKind::ADIM: slot = 2; break;
      case GroupKind::XAH: slot = 3; break;
      case GroupKind::XADIM: slot = 4; break;
      case GroupKind::CK:
        throw InvalidArgument("group_index: decoder blocks have no CK group");
    }
    return encoder_blocks * 4 + block * groups_per_decoder_block() + slot;
  }

  // Throws ConfigError naming the offending field.
  void validate() const {
    auto check_list = [](const std::vector<int>& v, const char* name, bool odd) {
      if (v.empty()) throw ConfigError(name, "choice list must be nonempty");
      for (std::size_t i = 0; i < v.size(); ++i) {
        if (v[i] <= 0) throw ConfigError(name, "choices must be positive");
        if (i && v[i] <= v[i - 1]) throw ConfigError(name, "choices must be strictly increasing");
        if (odd && v[i] % 2 == 0) throw ConfigError(name, "kernel sizes must be odd");
      }
    };
    check_list(fd, "fd", false);
    check_list(ah, "ah", false);
    check_list(adim, "adim", false);
    check_list(ck, "ck", true);
    if (d_model == 0) throw ConfigError("d_model", "must be positive");
    if (encoder_blocks == 0) throw ConfigError("encoder_blocks", "must be positive");
    if (decoder_blocks == 0) throw ConfigError("decoder_blocks", "must be positive");
  }
};

inline void to_json(json& j, const ArchSpace& s) {
  j = json{{"fd", s.fd},
           {"ah", s.ah},
           {"adim", s.adim},
           {"ck", s.ck},
           {"d_model", s.d_model},
           {"encoder_blocks", s.encoder_blocks},
           {"decoder_blocks", s.decoder_blocks},
           {"split_decoder_attention", s.split_decoder_attention}};
}

inline void from_json(const json& j, ArchSpace& s) {
  s.fd = j.at("fd").get<std::vector<int>>();
  s.ah = j.at("ah").get<std::vector<int>>();
  s.adim = j.at("adim").get<std::vector<int>>();
  s.ck = j.at("ck").get<std::vector<int>>();
  s.d_model = j.at("d_model").get<std::size_t>();
  s.encoder_blocks = j.at("encoder_blocks").get<std::size_t>();
  s.decoder_blocks = j.at("decoder_blocks").get<std::size_t>();
  s.split_decoder_attention = j.at("split_decoder_attention").get<bool>();
}

// Everything that fixes tensor shapes. Token ids: 0 is the CTC blank,
// vocab-1 is the shared start/end sentinel, 1..vocab-2 are real tokens.
struct ModelConfig {
  ArchSpace space;
  std::size_t feat_dim = 16;
  std::size_t vocab = 8;
  double ctc_weight = 0.3;
  double label_smoothing = 0.1;

  bool operator==(const ModelConfig&) const = default;

  int blank_id() const { return 0; }
  int sos_id() const { return static_cast<int>(vocab) - 1; }
  int eos_id() const { return static_cast<int>(vocab) - 1; }

  void validate() const {
    space.validate();
    if (feat_dim == 0) throw ConfigError("feat_dim", "must be positive");
    if (vocab < 3) throw ConfigError("vocab", "needs blank, sentinel and at least one token");
    if (ctc_weight < 0.0 || ctc_weight > 1.0) throw ConfigError("ctc_weight", "must lie in [0,1]");
    if (label_smoothing < 0.0 || label_smoothing >= 1.0)
      throw ConfigError("label_smoothing", "must lie in [0,1)");
  }
};

inline void to_json(json& j, const ModelConfig& c) {
  j = json{{"space", c.space},
           {"feat_dim", c.feat_dim},
           {"vocab", c.vocab},
           {"ctc_weight", c.ctc_weight},
           {"label_smoothing", c.label_smoothing}};
}

inline void from_json(const json& j, ModelConfig& c) {
  c.space = j.at("space").get<ArchSpace>();
  c.feat_dim = j.at("feat_dim").get<std::size_t>();
  c.vocab = j.at("vocab").get<std::size_t>();
  c.ctc_weight = j.at("ctc_weight").get<double>();
  c.label_smoothing = j.at("label_smoothing").get<double>();
}

// One concrete choice value per group, in canonical group order.
struct DerivedArch {
  std::vector<int> choice;

  bool operator==(const DerivedArch&) const = default;

  int get(const ArchSpace& s, BlockKind bk, std::size_t block, GroupKind k) const {
    return choice.at(s.group_index(bk, block, k));
  }

  std::size_t index_of(const ArchSpace& s, std::size_t group) const {
    const auto& list = s.choices(s.groups().at(group).kind);
    auto it = std::find(list.begin(), list.end(), choice.at(group));
    return static_cast<std::size_t>(it - list.begin());
  }

  void validate(const ArchSpace& s) const {
    const auto groups = s.groups();
    if (choice.size() != groups.size()) {
      throw InvalidArgument("arch has " + std::to_string(choice.size()) +
                            " choices, space has " + std::to_string(groups.size()) +
                            " groups");
    }
    for (std::size_t g = 0; g < groups.size(); ++g) {
      const auto& list = s.choices(groups[g].kind);
      if (std::find(list.begin(), list.end(), choice[g]) == list.end()) {
        throw InvalidArgument("arch choice " + std::to_string(choice[g]) + " for " +
                              groups[g].name() + " is not in the search space");
      }
    }
  }

  static DerivedArch from_indices(const ArchSpace& s, const std::vector<std::size_t>& idx) {
    const auto groups = s.groups();
    DerivedArch a;
    for (std::size_t g = 0; g < groups.size(); ++g) {
      a.choice.push_back(s.choices(groups[g].kind).at(idx.at(g)));
    }
    return a;
  }

  static DerivedArch max_of(const ArchSpace& s) {
    DerivedArch a;
    for (const auto& g : s.groups()) a.choice.push_back(s.max_choice(g.kind));
    return a;
  }

  static DerivedArch min_of(const ArchSpace& s) {
    DerivedArch a;
    for (const auto& g : s.groups()) a.choice.push_back(s.min_choice(g.kind));
    return a;
  }

  static DerivedArch random(const ArchSpace& s, Rng& rng) {
    DerivedArch a;
    for (const auto& g : s.groups()) {
      const auto& list = s.choices(g.kind);
      a.choice.push_back(list[rng.below(list.size())]);
    }
    return a;
  }

  // {"encoder": [{"FD":..,"AH":..,"ADIM":..,"CK":..}, ...], "decoder": [...]}
  json to_json(const ArchSpace& s) const {
    json enc = json::array(), dec = json::array();
    const auto groups = s.groups();
    for (std::size_t b = 0; b < s.encoder_blocks; ++b) enc.push_back(json::object());
    for (std::size_t b = 0; b < s.decoder_blocks; ++b) dec.push_back(json::object());
    for (std::size_t g = 0; g < groups.size(); ++g) {
      auto& row = groups[g].block_kind == BlockKind::Encoder ? enc[groups[g].block]
                                                             : dec[groups[g].block];
      row[group_kind_name(groups[g].kind)] = choice[g];
    }
    return json{{"encoder", enc}, {"decoder", dec}};
  }

  static DerivedArch from_json(const ArchSpace& s, const json& j) {
    DerivedArch a;
    for (const auto& g : s.groups()) {
      const auto& rows = j.at(g.block_kind == BlockKind::Encoder ? "encoder" : "decoder");
      a.choice.push_back(rows.at(g.block).at(group_kind_name(g.kind)).get<int>());
    }
    a.validate(s);
    return a;
  }
};

}  // namespace hpadapt
