#include "rsnet/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "rsnet/error.hpp"
#include "rsnet/layers.hpp"
#include "rsnet/rng.hpp"

namespace rsnet {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> parts;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) parts.push_back(trim(item));
  return parts;
}

std::int64_t parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long long r = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw UsageError("config key '" + key + "': expected an integer, got '" + v + "'");
  }
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double r = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw UsageError("config key '" + key + "': expected a number, got '" + v + "'");
  }
}

std::string join(const std::vector<std::int64_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + std::to_string(v[i]);
  return s;
}

template <typename E>
E parse_enum(const KeyValueFile& kv, const std::string& key, E fallback,
             const std::vector<std::pair<std::string, E>>& options) {
  if (!kv.has(key)) return fallback;
  const std::string& v = kv.get(key);
  for (const auto& [text, value] : options)
    if (text == v) return value;
  std::string allowed;
  for (const auto& o : options) allowed += (allowed.empty() ? "" : "|") + o.first;
  throw UsageError("config key '" + key + "': expected " + allowed + ", got '" + v + "'");
}

}  // namespace

KeyValueFile KeyValueFile::parse(const std::string& text, const std::string& origin) {
  KeyValueFile kv;
  kv.origin_ = origin;
  std::stringstream ss(text);
  std::string line;
  int number = 0;
  while (std::getline(ss, line)) {
    ++number;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw UsageError(origin + ":" + std::to_string(number) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw UsageError(origin + ":" + std::to_string(number) + ": empty key");
    if (kv.has(key)) throw UsageError(origin + ":" + std::to_string(number) + ": duplicate key '" + key + "'");
    kv.set(key, trim(line.substr(eq + 1)));
  }
  return kv;
}

KeyValueFile KeyValueFile::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open config file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse(buf.str(), path);
}

const std::string& KeyValueFile::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw UsageError(origin_ + ": missing key '" + key + "'");
  return it->second;
}

std::string KeyValueFile::get_or(const std::string& key, const std::string& fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

std::int64_t KeyValueFile::get_int(const std::string& key) const { return parse_int(key, get(key)); }

double KeyValueFile::get_double(const std::string& key) const { return parse_double(key, get(key)); }

std::vector<std::int64_t> KeyValueFile::get_ints(const std::string& key) const {
  std::vector<std::int64_t> out;
  for (const auto& p : split_list(get(key))) out.push_back(parse_int(key, p));
  return out;
}

std::vector<double> KeyValueFile::get_doubles(const std::string& key) const {
  std::vector<double> out;
  for (const auto& p : split_list(get(key))) out.push_back(parse_double(key, p));
  return out;
}

bool KeyValueFile::get_bool(const std::string& key) const {
  const std::string& v = get(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw UsageError("config key '" + key + "': expected true/false, got '" + v + "'");
}

void KeyValueFile::set(const std::string& key, const std::string& value) {
  if (!values_.count(key)) order_.push_back(key);
  values_[key] = value;
}

void KeyValueFile::require_known(const std::vector<std::string>& allowed) const {
  for (const auto& k : order_) {
    if (std::find(allowed.begin(), allowed.end(), k) == allowed.end()) {
      throw UsageError(origin_ + ": unknown key '" + k + "'");
    }
  }
}

ArchConfig ArchConfig::from_kv(const KeyValueFile& kv) {
  kv.require_known({"name", "input_channels", "input_size", "stem_widths", "stage_widths", "stage_blocks",
                    "backbone_pool", "backbone_block", "wavelet_aggregate", "cgb_dilation", "cgb_reduction", "neck",
                    "neck_width", "neck_blocks", "star_mlp_ratio", "star_dropout", "head", "head_width",
                    "num_classes", "strides"});
  ArchConfig c;
  c.name = kv.get_or("name", c.name);
  if (kv.has("input_channels")) c.input_channels = kv.get_int("input_channels");
  if (kv.has("input_size")) {
    const auto s = kv.get_ints("input_size");
    if (s.size() == 1) {
      c.input_h = c.input_w = s[0];
    } else if (s.size() == 2) {
      c.input_h = s[0];
      c.input_w = s[1];
    } else {
      throw UsageError("config key 'input_size': expected 'size' or 'height, width'");
    }
  }
  if (kv.has("stem_widths")) c.stem_widths = kv.get_ints("stem_widths");
  if (kv.has("stage_widths")) c.stage_widths = kv.get_ints("stage_widths");
  if (kv.has("stage_blocks")) c.stage_blocks = kv.get_ints("stage_blocks");
  c.backbone_pool = parse_enum<PoolKind>(kv, "backbone_pool", c.backbone_pool,
                                         {{"wavelet", PoolKind::Wavelet}, {"conv", PoolKind::Conv}});
  c.backbone_block = parse_enum<BackboneBlock>(
      kv, "backbone_block", c.backbone_block, {{"cgb", BackboneBlock::ContextGuided}, {"c2f", BackboneBlock::C2f}});
  c.wavelet_aggregate = parse_enum<WaveletAggregate>(
      kv, "wavelet_aggregate", c.wavelet_aggregate, {{"stack", WaveletAggregate::Stack}, {"sum", WaveletAggregate::Sum}});
  if (kv.has("cgb_dilation")) c.cgb_dilation = static_cast<int>(kv.get_int("cgb_dilation"));
  if (kv.has("cgb_reduction")) c.cgb_reduction = static_cast<int>(kv.get_int("cgb_reduction"));
  c.neck = parse_enum<NeckKind>(kv, "neck", c.neck, {{"wsf", NeckKind::WaveletStar}, {"c2f", NeckKind::C2f}});
  if (kv.has("neck_width")) c.neck_width = kv.get_int("neck_width");
  if (kv.has("neck_blocks")) c.neck_blocks = kv.get_int("neck_blocks");
  if (kv.has("star_mlp_ratio")) c.star_mlp_ratio = static_cast<int>(kv.get_int("star_mlp_ratio"));
  if (kv.has("star_dropout")) c.star_dropout = kv.get_double("star_dropout");
  c.head_shared = parse_enum<bool>(kv, "head", c.head_shared, {{"shared", true}, {"unshared", false}});
  if (kv.has("head_width")) c.head_width = kv.get_int("head_width");
  if (kv.has("num_classes")) c.num_classes = kv.get_int("num_classes");
  if (kv.has("strides")) {
    c.strides.clear();
    for (auto s : kv.get_ints("strides")) c.strides.push_back(static_cast<int>(s));
  }
  c.validate();
  return c;
}

ArchConfig ArchConfig::load(const std::string& path) { return from_kv(KeyValueFile::load(path)); }

std::vector<std::string> ArchConfig::preset_names() {
  return {"rsnet-ref", "rsnet-desk", "ablation-baseline", "ablation-wcg", "ablation-wcg-wsf"};
}

ArchConfig ArchConfig::preset(const std::string& name) {
  ArchConfig c;
  if (name == "rsnet-ref" || name.rfind("ablation-", 0) == 0) {
    // Widths chosen by `rsnet tune` (grid search toward the reference budget).
    c.name = "rsnet-ref";
    c.input_channels = 3;
    c.input_h = c.input_w = 640;
    c.stem_widths = {16, 48};
    c.stage_widths = {128, 256, 512};
    c.stage_blocks = {1, 2, 2};
    c.neck_width = 64;
    c.neck_blocks = 1;
    c.head_width = 48;
    if (name == "rsnet-ref") return c;
    c.name = name;
    if (name == "ablation-wcg-wsf") {
      c.head_shared = false;
      return c;
    }
    if (name == "ablation-wcg") {
      c.head_shared = false;
      c.neck = NeckKind::C2f;
      return c;
    }
    if (name == "ablation-baseline") {
      c.head_shared = false;
      c.neck = NeckKind::C2f;
      c.backbone_pool = PoolKind::Conv;
      c.backbone_block = BackboneBlock::C2f;
      return c;
    }
  } else if (name == "rsnet-desk") {
    c.name = "rsnet-desk";
    c.input_channels = 1;
    c.input_h = c.input_w = 128;
    c.stem_widths = {8, 16};
    c.stage_widths = {32, 48, 64};
    c.stage_blocks = {1, 1, 1};
    c.neck_width = 32;
    c.neck_blocks = 1;
    c.head_width = 32;
    return c;
  }
  throw UsageError("unknown preset '" + name + "'");
}

ArchConfig ArchConfig::resolve(const std::string& name_or_path) {
  const auto names = preset_names();
  if (std::find(names.begin(), names.end(), name_or_path) != names.end()) return preset(name_or_path);
  return load(name_or_path);
}

std::string format_double(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string ArchConfig::to_text() const {
  std::ostringstream os;
  const std::string dropout = format_double(star_dropout);
  std::vector<std::int64_t> s(strides.begin(), strides.end());
  os << "name = " << name << "\n"
     << "input_channels = " << input_channels << "\n"
     << "input_size = " << input_h << ", " << input_w << "\n"
     << "stem_widths = " << join(stem_widths) << "\n"
     << "stage_widths = " << join(stage_widths) << "\n"
     << "stage_blocks = " << join(stage_blocks) << "\n"
     << "backbone_pool = " << (backbone_pool == PoolKind::Wavelet ? "wavelet" : "conv") << "\n"
     << "backbone_block = " << (backbone_block == BackboneBlock::ContextGuided ? "cgb" : "c2f") << "\n"
     << "wavelet_aggregate = " << (wavelet_aggregate == WaveletAggregate::Stack ? "stack" : "sum") << "\n"
     << "cgb_dilation = " << cgb_dilation << "\n"
     << "cgb_reduction = " << cgb_reduction << "\n"
     << "neck = " << (neck == NeckKind::WaveletStar ? "wsf" : "c2f") << "\n"
     << "neck_width = " << neck_width << "\n"
     << "neck_blocks = " << neck_blocks << "\n"
     << "star_mlp_ratio = " << star_mlp_ratio << "\n"
     << "star_dropout = " << dropout << "\n"
     << "head = " << (head_shared ? "shared" : "unshared") << "\n"
     << "head_width = " << head_width << "\n"
     << "num_classes = " << num_classes << "\n"
     << "strides = " << join(s) << "\n";
  return os.str();
}

std::uint64_t ArchConfig::digest() const {
  // The display name does not change the graph.
  const std::string text = to_text();
  return fnv1a64(std::string_view(text).substr(text.find('\n') + 1));
}

void ArchConfig::validate() const {
  const auto fail = [&](const std::string& msg) { throw UsageError("config '" + name + "': " + msg); };
  if (input_channels < 1) fail("input_channels must be >= 1");
  if (input_h <= 0 || input_w <= 0 || input_h % 32 != 0 || input_w % 32 != 0) {
    fail("input_size must be positive and divisible by 32");
  }
  if (stem_widths.size() != 2) fail("stem_widths needs 2 entries");
  if (stage_widths.size() != 3 || stage_blocks.size() != 3) fail("stage_widths and stage_blocks need 3 entries");
  if (strides != std::vector<int>{8, 16, 32}) fail("strides must be 8, 16, 32 (stem /4 followed by three /2 stages)");
  for (auto w : stem_widths)
    if (w < 2 || w % 2 != 0) fail("stem widths must be positive and even");
  for (auto w : stage_widths)
    if (w < 2 || w % 2 != 0) fail("stage widths must be positive and even");
  for (auto b : stage_blocks)
    if (b < 0) fail("stage_blocks must be >= 0");
  if (cgb_dilation < 1) fail("cgb_dilation must be >= 1");
  if (cgb_reduction < 1) fail("cgb_reduction must be >= 1");
  if (neck_width < 2 || neck_width % 2 != 0) fail("neck_width must be positive and even");
  if (neck_blocks < 0) fail("neck_blocks must be >= 0");
  if (neck == NeckKind::C2f && neck_blocks < 1) fail("a c2f neck needs neck_blocks >= 1");
  if (neck == NeckKind::WaveletStar) {
    if (stage_widths[2] % 4 != 0) fail("wavelet unpooling needs the last stage width divisible by 4");
    if (neck_width % 4 != 0) fail("wavelet unpooling needs neck_width divisible by 4");
  }
  if (star_mlp_ratio < 1) fail("star_mlp_ratio must be >= 1");
  if (star_dropout < 0 || star_dropout >= 1) fail("star_dropout must lie in [0, 1)");
  if (head_width < 1 || head_width % group_norm_groups(head_width) != 0) {
    fail("head_width must be divisible by its group-norm group count");
  }
  if (num_classes < 1) fail("num_classes must be >= 1");
}

}  // namespace rsnet
