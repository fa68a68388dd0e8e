#pragma once

#include <map>
#include <optional>
#include <string>

#include "aloe/energy.hpp"
#include "aloe/sampler.hpp"

namespace aloe {

// Text checkpoint: named sections of 64-bit reals in spec order, each
// preceded by a one-line header naming the spec. Values are written with
// %.17g so a load/save round trip is value-exact.
struct Checkpoint {
  struct NetSection {
    DenseNetSpec spec;
    ParamVector params;
  };
  struct TableSection {
    int rows = 0;
    int cols = 0;
    ParamVector values;
  };

  std::map<std::string, std::string> meta;
  std::map<std::string, NetSection> nets;
  std::map<std::string, TableSection> tables;

  void set_meta(const std::string& key, const std::string& value) { meta[key] = value; }
  std::string meta_or(const std::string& key, const std::string& fallback) const;
  int meta_int(const std::string& key) const;
  double meta_double(const std::string& key) const;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);  // throws on malformed input

void add_energy_model(Checkpoint& ckpt, const EnergyModel& model);
EnergyModel energy_model_from(const Checkpoint& ckpt);

void add_init_sampler(Checkpoint& ckpt, const InitSampler& q0, const std::string& prefix);
InitSampler init_sampler_from(const Checkpoint& ckpt, const std::string& prefix);

void add_sampler(Checkpoint& ckpt, const SamplerParams& q);
std::optional<SamplerParams> sampler_from(const Checkpoint& ckpt);

}  // namespace aloe
