#include "rsnet/count.hpp"

#include <cstdio>
#include <sstream>

namespace rsnet {

std::int64_t CountReport::total_params() const {
  std::int64_t t = 0;
  for (const auto& r : rows) t += r.params;
  return t;
}

std::int64_t CountReport::total_macs() const {
  std::int64_t t = 0;
  for (const auto& r : rows) t += r.macs;
  return t;
}

CountRow* CountReport::find(const std::string& name) {
  for (auto& r : rows)
    if (r.name == name) return &r;
  return nullptr;
}

std::string CountReport::table() const {
  std::ostringstream os;
  char line[256];
  os << "# input " << input_h << "x" << input_w
     << "; FLOPs = 2 x MACs over convolutions (incl. fixed wavelet filters) and norms; activations ignored\n";
  std::snprintf(line, sizeof line, "%-40s %-14s %12s %16s %16s\n", "layer", "kind", "params", "MACs", "output");
  os << line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%-40s %-14s %12lld %16lld %16s\n", r.name.c_str(), r.kind.c_str(),
                  static_cast<long long>(r.params), static_cast<long long>(r.macs), r.out.str().c_str());
    os << line;
  }
  std::snprintf(line, sizeof line, "total params %lld (%.3f M)\n", static_cast<long long>(total_params()),
                static_cast<double>(total_params()) / 1e6);
  os << line;
  std::snprintf(line, sizeof line, "total MACs %lld (%.3f G); FLOPs (2xMACs) %lld (%.3f G)\n",
                static_cast<long long>(total_macs()), static_cast<double>(total_macs()) / 1e9,
                static_cast<long long>(total_flops()), static_cast<double>(total_flops()) / 1e9);
  os << line;
  return os.str();
}

std::string CountReport::csv() const {
  std::ostringstream os;
  os << "layer,kind,params,macs,out_c,out_h,out_w\n";
  for (const auto& r : rows) {
    os << r.name << ',' << r.kind << ',' << r.params << ',' << r.macs << ',' << r.out.c << ',' << r.out.h << ','
       << r.out.w << '\n';
  }
  os << "total,,"<< total_params() << ',' << total_macs() << ",,,\n";
  os << "total_flops_2x_macs,,," << total_flops() << ",,,\n";
  return os.str();
}

}  // namespace rsnet
