#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "v2p/error.hpp"
#include "v2p/scenario.hpp"

namespace v2p::scenario {

namespace {

using Json = nlohmann::ordered_json;

const char* role_name(safety::MonitorRole r) { return r == safety::MonitorRole::Vehicle ? "vehicle" : "phone"; }

const char* link_name(channel::NodeKind from, channel::NodeKind to) {
  using channel::NodeKind;
  if (from == NodeKind::Vehicle) return to == NodeKind::Vehicle ? "v2v" : "v2p";
  return to == NodeKind::Vehicle ? "p2v" : "p2p";
}

// Fixed-precision numbers keep the CSV byte-identical across runs.
std::string num(double v, int digits = 4) {
  if (!std::isfinite(v)) return v > 0 ? "inf" : (v < 0 ? "-inf" : "nan");
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

class CsvFile {
 public:
  CsvFile(const std::filesystem::path& path, const char* header) : path_(path), os_(path) {
    if (!os_) throw IoError("cannot open " + path.string() + " for writing");
    os_ << header << '\n';
  }
  ~CsvFile() noexcept(false) {
    os_.flush();
    if (!os_ && std::uncaught_exceptions() == 0) throw IoError("write failed: " + path_.string());
  }
  std::ostream& os() { return os_; }

 private:
  std::filesystem::path path_;
  std::ofstream os_;
};

void write_relpath(const std::vector<RelPathRow>& rows, const std::filesystem::path& path) {
  CsvFile f(path, "time_s,x_m,y_m,zone,source");
  for (const auto& r : rows) {
    f.os() << num(r.time_s, 2) << ',' << num(r.x_m) << ',' << num(r.y_m) << ','
           << (r.zone ? safety::to_string(*r.zone) : "") << ',' << (r.zone ? "map" : "truth") << '\n';
  }
}

Json opt(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

Json ledger_json(const policy::EnergyLedger& e) {
  return Json{{"gps_mwh", e.gps_mwh}, {"radio_rx_mwh", e.radio_rx_mwh}, {"radio_tx_mwh", e.radio_tx_mwh},
              {"total_mwh", e.total_mwh()}};
}

}  // namespace

void TraceLog::write_csv(std::ostream& os) const {
  os << "time_s,type,device,detail\n";
  for (const auto& r : records_) {
    os << num(r.time_s, 6) << ',' << r.type << ',' << r.device << ',' << csv_field(r.detail) << '\n';
  }
}

std::string summary_json(const RunResult& r) {
  const auto& s = r.summary;
  Json j;
  j["scenario"] = to_string(r.kind);
  j["duration_s"] = r.duration_s;
  j["app_tick_s"] = r.app_tick_s;
  j["vehicles"] = std::count(r.actor_kinds.begin(), r.actor_kinds.end(), ActorKind::Vehicle);
  j["vrus"] = std::count(r.actor_kinds.begin(), r.actor_kinds.end(), ActorKind::Vru);
  j["conflict_time_s"] = opt(s.conflict_time_s);
  j["first_advisory"] = {{"time_s", opt(s.first_advisory_time_s)},
                         {"d_lon_m", opt(s.first_advisory_d_lon_m)},
                         {"distance_to_conflict_m", opt(s.first_advisory_conflict_distance_m)}};
  j["first_imminent"] = {{"time_s", opt(s.first_imminent_time_s)},
                         {"d_lon_m", opt(s.first_imminent_d_lon_m)},
                         {"distance_to_conflict_m", opt(s.first_imminent_conflict_distance_m)}};
  j["phone_first_imminent_time_s"] = opt(s.phone_first_imminent_time_s);
  j["min_separation_m"] = std::isfinite(s.min_separation_m) ? Json(s.min_separation_m) : Json(nullptr);
  j["min_separation_time_s"] = s.min_separation_time_s;
  j["warnings"] = s.warnings;
  j["transmissions"] = s.transmissions;
  j["deliveries"] = s.deliveries;
  j["stale_drops"] = s.stale_drops;
  j["drops"] = {{"below_sensitivity", s.drops.below_sensitivity},
                {"collision", s.drops.collision},
                {"noise_limited", s.drops.noise_limited},
                {"busy_expired", s.drops.busy_expired}};
  j["mean_cbp"] = s.mean_cbp;
  policy::EnergyLedger total;
  for (const auto& e : r.energy) {
    total.gps_mwh += e.ledger.gps_mwh;
    total.radio_rx_mwh += e.ledger.radio_rx_mwh;
    total.radio_tx_mwh += e.ledger.radio_tx_mwh;
  }
  j["vru_energy_total"] = ledger_json(total);
  return j.dump(2) + "\n";
}

void emit_outputs(const RunResult& r, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) throw IoError("cannot create output directory " + dir.string());

  write_relpath(r.relpath_vehicle, dir / "relpath_vehicle.csv");
  write_relpath(r.relpath_phone, dir / "relpath_phone.csv");
  {
    CsvFile f(dir / "dts_trace.csv",
              "time_s,device,role,target,d_lon_m,d_lat_m,dts_min_m,dts_guard_m,dts_mod_m,label,level");
    for (const auto& z : r.dts_trace) {
      f.os() << num(z.time_s, 2) << ',' << z.device << ',' << role_name(z.role) << ',' << z.target << ','
             << num(z.d_lon) << ',' << num(z.d_lat) << ',' << num(z.zones.dts_min) << ',' << num(z.zones.dts_guard)
             << ',' << num(z.zones.dts_mod) << ',' << safety::to_string(z.label) << ','
             << safety::to_string(z.level) << '\n';
    }
  }
  {
    CsvFile f(dir / "per.csv", "link,bin_start_m,bin_end_m,attempted,failed,per");
    for (const auto& entry : r.channel.per_by_link) {
      const auto& link = entry.first;
      for (const auto& [b, pb] : r.channel.aggregated(r.per_bin_width_m, link.first, link.second)) {
        f.os() << link_name(link.first, link.second) << ',' << num(b * r.per_bin_width_m, 1) << ','
               << num((b + 1) * r.per_bin_width_m, 1) << ',' << pb.attempted << ',' << pb.failed << ','
               << num(pb.per(), 6) << '\n';
      }
    }
  }
  {
    CsvFile f(dir / "cbp.csv", "window_start_s,device,kind,cbp");
    for (const auto& c : r.channel.cbp_series) {
      const bool known = c.device < r.actor_ids.size();
      f.os() << num(c.window_start_s, 1) << ',' << (known ? r.actor_ids[c.device] : c.device) << ','
             << (known ? to_string(r.actor_kinds[c.device]) : "?") << ',' << num(c.cbp, 6) << '\n';
    }
  }
  {
    CsvFile f(dir / "warnings.csv", "time_s,device,role,target,level,previous,label,d_lon_m,d_lat_m");
    for (const auto& w : r.warnings) {
      const auto& e = w.event;
      f.os() << num(e.time_s, 2) << ',' << w.device << ',' << role_name(w.role) << ',' << e.target << ','
             << safety::to_string(e.level) << ',' << safety::to_string(e.previous) << ','
             << safety::to_string(e.label) << ',' << num(e.d_lon) << ',' << num(e.d_lat) << '\n';
    }
  }
  {
    CsvFile f(dir / "energy.csv", "device,gps_mwh,radio_rx_mwh,radio_tx_mwh,total_mwh");
    for (const auto& e : r.energy) {
      f.os() << e.device << ',' << num(e.ledger.gps_mwh, 6) << ',' << num(e.ledger.radio_rx_mwh, 6) << ','
             << num(e.ledger.radio_tx_mwh, 6) << ',' << num(e.ledger.total_mwh(), 6) << '\n';
    }
  }
  {
    std::ofstream os(dir / "trace.csv");
    if (!os) throw IoError("cannot open " + (dir / "trace.csv").string() + " for writing");
    r.trace.write_csv(os);
    if (!os.flush()) throw IoError("write failed: " + (dir / "trace.csv").string());
  }
  {
    std::ofstream os(dir / "summary.json");
    if (!os) throw IoError("cannot open " + (dir / "summary.json").string() + " for writing");
    os << summary_json(r);
    if (!os.flush()) throw IoError("write failed: " + (dir / "summary.json").string());
  }
}

void write_ab_outputs(const AbReport& rep, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) throw IoError("cannot create output directory " + dir.string());
  {
    CsvFile f(dir / "ab_cbp.csv", "seed,window_start_s,cbp_off,cbp_on");
    for (std::size_t s = 0; s < rep.cbp.size(); ++s) {
      for (const auto& w : rep.cbp[s]) {
        f.os() << rep.seeds[s] << ',' << w.window << ',' << num(w.cbp_off, 6) << ',' << num(w.cbp_on, 6) << '\n';
      }
    }
  }
  {
    CsvFile f(dir / "ab_per.csv", "bin_start_m,bin_end_m,attempted_off,failed_off,per_off,attempted_on,failed_on,per_on");
    for (const auto& b : rep.per) {
      f.os() << num(b.bin * rep.bin_width_m, 1) << ',' << num((b.bin + 1) * rep.bin_width_m, 1) << ','
             << b.off.attempted << ',' << b.off.failed << ',' << num(b.off.per(), 6) << ',' << b.on.attempted << ','
             << b.on.failed << ',' << num(b.on.per(), 6) << '\n';
    }
  }
  {
    CsvFile f(dir / "ab_energy.csv", "seed,device,total_mwh_off,total_mwh_on");
    for (const auto& e : rep.energy) {
      f.os() << e.seed << ',' << e.device << ',' << num(e.off.total_mwh(), 6) << ',' << num(e.on.total_mwh(), 6)
             << '\n';
    }
  }
}

void print_ab_table(const AbReport& rep, std::ostream& os) {
  std::map<int, std::pair<double, double>> cbp;
  std::map<int, int> n;
  for (const auto& seed : rep.cbp) {
    for (const auto& w : seed) {
      cbp[w.window].first += w.cbp_off;
      cbp[w.window].second += w.cbp_on;
      ++n[w.window];
    }
  }
  os << "CBP by 1 s window (mean over seeds)\n";
  os << std::setw(8) << "window" << std::setw(12) << "off" << std::setw(12) << "on" << '\n';
  for (const auto& [w, c] : cbp) {
    os << std::setw(8) << w << std::setw(12) << num(c.first / n[w]) << std::setw(12) << num(c.second / n[w])
       << '\n';
  }
  os << "\nVehicle-to-VRU PER by distance\n";
  os << std::setw(14) << "bin_m" << std::setw(12) << "off" << std::setw(10) << "n_off" << std::setw(12) << "on"
     << std::setw(10) << "n_on" << '\n';
  for (const auto& b : rep.per) {
    std::ostringstream bin;
    bin << b.bin * rep.bin_width_m << '-' << (b.bin + 1) * rep.bin_width_m;
    os << std::setw(14) << bin.str() << std::setw(12) << num(b.off.per()) << std::setw(10) << b.off.attempted
       << std::setw(12) << num(b.on.per()) << std::setw(10) << b.on.attempted << '\n';
  }
  double off = 0.0, on = 0.0;
  for (const auto& e : rep.energy) {
    off += e.off.total_mwh();
    on += e.on.total_mwh();
  }
  const double devices = rep.energy.empty() ? 1.0 : static_cast<double>(rep.energy.size());
  os << "\nVRU energy per device (mWh): off " << num(off / devices) << ", on " << num(on / devices) << '\n';
}

}  // namespace v2p::scenario
