#include "aloe/checkpoint.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace aloe {

namespace {

std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(v[i]);
  }
  return s;
}

std::vector<int> split_ints(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stoi(item));
  return out;
}

std::string spec_header(const DenseNetSpec& spec) {
  std::string act;
  for (size_t i = 0; i < spec.hidden.size(); ++i) {
    if (i) act += ',';
    act += to_string(spec.hidden[i]);
  }
  if (act.empty()) act = "-";
  return "spec=" + join_ints(spec.layer_sizes) + " act=" + act + " out=" + to_string(spec.output);
}

DenseNetSpec parse_spec(const std::string& sizes, const std::string& act,
                        const std::string& out) {
  DenseNetSpec spec;
  spec.layer_sizes = split_ints(sizes);
  if (act != "-") {
    std::stringstream ss(act);
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (item == "elu")
        spec.hidden.push_back(Activation::elu);
      else if (item == "none")
        spec.hidden.push_back(Activation::none);
      else
        throw std::runtime_error("checkpoint: unknown activation " + item);
    }
  }
  if (out == "identity")
    spec.output = OutputTransform::identity;
  else if (out == "log_softmax")
    spec.output = OutputTransform::log_softmax;
  else if (out == "log_sigmoid")
    spec.output = OutputTransform::log_sigmoid;
  else
    throw std::runtime_error("checkpoint: unknown output transform " + out);
  spec.validate();
  return spec;
}

void write_values(std::ofstream& out, const ParamVector& v) {
  char buf[48];
  for (double x : v) {
    std::snprintf(buf, sizeof buf, "%.17g", x);
    out << buf << "\n";
  }
}

std::string field(const std::string& line, const std::string& key) {
  const std::string needle = key + "=";
  const size_t at = line.find(needle);
  if (at == std::string::npos) throw std::runtime_error("checkpoint: missing field " + key);
  const size_t start = at + needle.size();
  const size_t end = line.find(' ', start);
  return line.substr(start, end == std::string::npos ? std::string::npos : end - start);
}

}  // namespace

std::string Checkpoint::meta_or(const std::string& key, const std::string& fallback) const {
  auto it = meta.find(key);
  return it == meta.end() ? fallback : it->second;
}
int Checkpoint::meta_int(const std::string& key) const {
  auto it = meta.find(key);
  if (it == meta.end()) throw std::runtime_error("checkpoint: missing meta " + key);
  return std::stoi(it->second);
}
double Checkpoint::meta_double(const std::string& key) const {
  auto it = meta.find(key);
  if (it == meta.end()) throw std::runtime_error("checkpoint: missing meta " + key);
  return std::stod(it->second);
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path);
  out << "aloe-checkpoint v1\n";
  for (const auto& [k, v] : ckpt.meta) out << "meta " << k << " " << v << "\n";
  for (const auto& [name, table] : ckpt.tables) {
    out << "table " << name << " rows=" << table.rows << " cols=" << table.cols
        << " count=" << table.values.size() << "\n";
    write_values(out, table.values);
  }
  for (const auto& [name, net] : ckpt.nets) {
    out << "net " << name << " " << spec_header(net.spec) << " count=" << net.params.size()
        << "\n";
    write_values(out, net.params);
  }
  out << "end\n";
  if (!out) throw std::runtime_error("failed writing checkpoint " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);
  std::string line;
  if (!std::getline(in, line) || line != "aloe-checkpoint v1")
    throw std::runtime_error("not an aloe checkpoint: " + path);
  Checkpoint ckpt;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line == "end") return ckpt;
    std::stringstream ss(line);
    std::string kind;
    ss >> kind;
    if (kind == "meta") {
      std::string key, value;
      ss >> key >> value;
      ckpt.meta[key] = value;
    } else if (kind == "table") {
      std::string name;
      ss >> name;
      Checkpoint::TableSection table;
      table.rows = std::stoi(field(line, "rows"));
      table.cols = std::stoi(field(line, "cols"));
      const size_t count = size_t(std::stoull(field(line, "count")));
      table.values.resize(count);
      for (size_t i = 0; i < count; ++i) {
        if (!std::getline(in, line)) throw std::runtime_error("checkpoint: truncated table");
        table.values[i] = std::strtod(line.c_str(), nullptr);
      }
      ckpt.tables[name] = std::move(table);
    } else if (kind == "net") {
      std::string name;
      ss >> name;
      Checkpoint::NetSection net;
      net.spec = parse_spec(field(line, "spec"), field(line, "act"), field(line, "out"));
      const size_t count = size_t(std::stoull(field(line, "count")));
      if (int64_t(count) != param_count(net.spec))
        throw std::runtime_error("checkpoint: section size does not match spec: " + name);
      net.params.resize(count);
      for (size_t i = 0; i < count; ++i) {
        if (!std::getline(in, line)) throw std::runtime_error("checkpoint: truncated net");
        net.params[i] = std::strtod(line.c_str(), nullptr);
      }
      ckpt.nets[name] = std::move(net);
    } else {
      throw std::runtime_error("checkpoint: unknown section kind " + kind);
    }
  }
  throw std::runtime_error("checkpoint: missing end marker in " + path);
}

void add_energy_model(Checkpoint& ckpt, const EnergyModel& model) {
  ckpt.set_meta("d", std::to_string(model.d));
  ckpt.set_meta("K", std::to_string(model.K));
  ckpt.nets["energy"] = {model.spec, model.params};
}

EnergyModel energy_model_from(const Checkpoint& ckpt) {
  auto it = ckpt.nets.find("energy");
  if (it == ckpt.nets.end()) throw std::runtime_error("checkpoint has no energy net");
  EnergyModel model;
  model.d = ckpt.meta_int("d");
  model.K = ckpt.meta_int("K");
  model.spec = it->second.spec;
  model.params = it->second.params;
  model.validate();
  return model;
}

void add_init_sampler(Checkpoint& ckpt, const InitSampler& q0, const std::string& prefix) {
  if (const auto* fac = std::get_if<FactorizedInit>(&q0)) {
    ckpt.tables[prefix + "_logits"] = {fac->d, fac->K, fac->logits};
    ckpt.set_meta(prefix + "_variant", "factorized");
    return;
  }
  const auto& ar = std::get<AutoregressiveInit>(q0);
  ckpt.set_meta(prefix + "_variant", "autoregressive");
  ckpt.set_meta(prefix + "_embed_dim", std::to_string(ar.embed_dim));
  for (int i = 0; i < ar.d; ++i)
    ckpt.nets[prefix + "_embed_" + std::to_string(i)] = {ar.embed_specs[size_t(i)],
                                                         ar.embed_params[size_t(i)]};
  ckpt.nets[prefix + "_head"] = {ar.head_spec, ar.head_params};
}

InitSampler init_sampler_from(const Checkpoint& ckpt, const std::string& prefix) {
  const std::string variant = ckpt.meta_or(prefix + "_variant", "");
  const int d = ckpt.meta_int("d");
  const int K = ckpt.meta_int("K");
  if (variant == "factorized") {
    auto it = ckpt.tables.find(prefix + "_logits");
    if (it == ckpt.tables.end()) throw std::runtime_error("checkpoint: missing " + prefix);
    FactorizedInit f;
    f.d = d;
    f.K = K;
    f.logits = it->second.values;
    return f;
  }
  if (variant != "autoregressive")
    throw std::runtime_error("checkpoint: no init sampler under prefix " + prefix);
  AutoregressiveInit ar;
  ar.d = d;
  ar.K = K;
  ar.embed_dim = ckpt.meta_int(prefix + "_embed_dim");
  for (int i = 0; i < d; ++i) {
    auto it = ckpt.nets.find(prefix + "_embed_" + std::to_string(i));
    if (it == ckpt.nets.end()) throw std::runtime_error("checkpoint: missing embed net");
    ar.embed_specs.push_back(it->second.spec);
    ar.embed_params.push_back(it->second.params);
  }
  auto it = ckpt.nets.find(prefix + "_head");
  if (it == ckpt.nets.end()) throw std::runtime_error("checkpoint: missing head net");
  ar.head_spec = it->second.spec;
  ar.head_params = it->second.params;
  return ar;
}

void add_sampler(Checkpoint& ckpt, const SamplerParams& q) {
  add_init_sampler(ckpt, q.q0, "q0");
  ckpt.set_meta("max_steps", std::to_string(q.max_steps));
  ckpt.set_meta("editor", q.editor ? "on" : "off");
  if (q.editor) {
    ckpt.nets["editor_position"] = {q.editor->position_spec, q.editor->position_params};
    if (q.editor->has_value_net())
      ckpt.nets["editor_value"] = {q.editor->value_spec, q.editor->value_params};
    ckpt.nets["stop"] = {q.stop->spec, q.stop->params};
  }
}

std::optional<SamplerParams> sampler_from(const Checkpoint& ckpt) {
  if (ckpt.meta_or("q0_variant", "").empty()) return std::nullopt;
  SamplerParams q;
  q.q0 = init_sampler_from(ckpt, "q0");
  q.max_steps = std::stoi(ckpt.meta_or("max_steps", "16"));
  if (ckpt.meta_or("editor", "off") == "on") {
    const int d = ckpt.meta_int("d");
    const int K = ckpt.meta_int("K");
    Editor e;
    e.d = d;
    e.K = K;
    auto it = ckpt.nets.find("editor_position");
    if (it == ckpt.nets.end()) throw std::runtime_error("checkpoint: missing editor net");
    e.position_spec = it->second.spec;
    e.position_params = it->second.params;
    if (K > 2) {
      auto vit = ckpt.nets.find("editor_value");
      if (vit == ckpt.nets.end()) throw std::runtime_error("checkpoint: missing value net");
      e.value_spec = vit->second.spec;
      e.value_params = vit->second.params;
    }
    q.editor = std::move(e);
    auto sit = ckpt.nets.find("stop");
    if (sit == ckpt.nets.end()) throw std::runtime_error("checkpoint: missing stop net");
    StopPolicy s;
    s.spec = sit->second.spec;
    s.params = sit->second.params;
    q.stop = std::move(s);
  }
  q.validate();
  return q;
}

}  // namespace aloe
