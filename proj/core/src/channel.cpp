#include "v2p/channel.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "v2p/error.hpp"

namespace v2p::channel {

SimTime from_seconds(double s) { return static_cast<SimTime>(std::llround(s * 1e9)); }
double to_seconds(SimTime t) { return static_cast<double>(t) / 1e9; }

RadioConfig RadioConfig::vehicle() { return RadioConfig{}; }

RadioConfig RadioConfig::phone() {
  RadioConfig r;
  r.tx_power_dbm = 10.0;
  return r;
}

void RadioConfig::validate() const {
  const double all[] = {tx_power_dbm, bitrate_bps, bandwidth_hz, slot_time_us, sifs_us, cca_threshold_dbm,
                        rx_sensitivity_dbm, sinr_threshold_db, preamble_us, noise_floor_dbm};
  for (double v : all) {
    if (!std::isfinite(v)) throw InvalidInput("radio parameters must be finite");
  }
  if (aifsn < 2) throw InvalidInput("aifsn must be >= 2");
  if (cw < 1) throw InvalidInput("cw must be >= 1");
  if (bitrate_bps <= 0.0) throw InvalidInput("bitrate must be positive");
  if (slot_time_us <= 0.0 || sifs_us < 0.0 || preamble_us < 0.0) throw InvalidInput("MAC timings invalid");
}

SimTime RadioConfig::slot() const { return static_cast<SimTime>(std::llround(slot_time_us * 1e3)); }

SimTime RadioConfig::aifs() const {
  return static_cast<SimTime>(std::llround(sifs_us * 1e3)) + aifsn * slot();
}

SimTime RadioConfig::airtime(std::size_t on_air_bytes) const {
  return static_cast<SimTime>(std::llround(preamble_us * 1e3 + static_cast<double>(on_air_bytes) * 8.0 / bitrate_bps * 1e9));
}

double path_loss_db(double distance_m, const PropagationConfig& prop) {
  const double d = std::max(distance_m, prop.min_distance_m);
  return prop.pl0_db + 10.0 * prop.exponent * std::log10(d / prop.ref_distance_m);
}

double dbm_to_mw(double dbm) { return std::pow(10.0, dbm / 10.0); }
double mw_to_dbm(double mw) { return 10.0 * std::log10(mw); }

const char* to_string(ReceptionResult r) {
  switch (r) {
    case ReceptionResult::Delivered: return "delivered";
    case ReceptionResult::BelowSensitivity: return "below_sensitivity";
    case ReceptionResult::Collision: return "collision";
  }
  return "?";
}

const char* to_string(NodeKind k) { return k == NodeKind::Vehicle ? "vehicle" : "phone"; }

ReceptionResult evaluate_reception(double rx_power_dbm, double interference_mw, const RadioConfig& rx) {
  if (rx_power_dbm < rx.rx_sensitivity_dbm) return ReceptionResult::BelowSensitivity;
  const double sinr = rx_power_dbm - mw_to_dbm(dbm_to_mw(rx.noise_floor_dbm) + interference_mw);
  return sinr >= rx.sinr_threshold_db ? ReceptionResult::Delivered : ReceptionResult::Collision;
}

namespace {

std::map<int, PerBin> rebin(const std::map<int, PerBin>& bins, double from_width, double to_width) {
  const auto factor = static_cast<int>(std::llround(to_width / from_width));
  if (factor < 1 || std::fabs(factor * from_width - to_width) > 1e-9) {
    throw InvalidInput("aggregation width must be a multiple of the bin width");
  }
  std::map<int, PerBin> out;
  for (const auto& [k, b] : bins) {
    auto& o = out[k >= 0 ? k / factor : -((-k - 1) / factor) - 1];
    o.attempted += b.attempted;
    o.failed += b.failed;
  }
  return out;
}

double distance(const geo::EnuPosition& a, const geo::EnuPosition& b) {
  return std::hypot(a.east_m - b.east_m, a.north_m - b.north_m, a.up_m - b.up_m);
}

}  // namespace

std::map<int, PerBin> ChannelMetrics::aggregated(double width_m) const {
  return rebin(per_bins, bin_width_m, width_m);
}

std::map<int, PerBin> ChannelMetrics::aggregated(double width_m, NodeKind from, NodeKind to) const {
  auto it = per_by_link.find({from, to});
  if (it == per_by_link.end()) return {};
  return rebin(it->second, bin_width_m, width_m);
}

Channel::Channel(PropagationConfig prop, std::uint64_t seed, double per_bin_width_m)
    : prop_(prop), rng_(seed) {
  if (!(per_bin_width_m > 0.0)) throw InvalidInput("PER bin width must be positive");
  metrics_.bin_width_m = per_bin_width_m;
}

NodeId Channel::add_node(NodeKind kind, const RadioConfig& radio, const geo::EnuPosition& position) {
  radio.validate();
  Node& n = nodes_.emplace_back();
  n.kind = kind;
  n.radio = radio;
  n.position = position;
  n.on_since = now_;
  const auto id = static_cast<NodeId>(nodes_.size() - 1);
  for (auto& f : active_) {
    // A node added mid-frame hears it from now on but cannot decode it.
    Node& added = nodes_.back();
    f.rx_mw.push_back(received_mw(nodes_[f.ev.sender], f.ev.tx_power_dbm, added, true));
    f.worst_interference_mw.push_back(0.0);
    f.receiver_on.push_back(0);
    f.half_duplex.push_back(0);
  }
  refresh_sensing(now_);
  return id;
}

void Channel::set_position(NodeId node, const geo::EnuPosition& position) { nodes_.at(node).position = position; }

void Channel::set_tx_power(NodeId node, double dbm) {
  if (!std::isfinite(dbm)) throw InvalidInput("tx power must be finite");
  nodes_.at(node).radio.tx_power_dbm = dbm;
}

bool Channel::radio_on(NodeId node) const { return nodes_.at(node).on; }
const RadioConfig& Channel::radio(NodeId node) const { return nodes_.at(node).radio; }
const NodeStats& Channel::stats(NodeId node) const { return nodes_.at(node).stats; }
bool Channel::medium_busy(NodeId node) const { return busy(nodes_.at(node)); }

void Channel::set_radio_on(NodeId node, bool on, SimTime now) {
  Node& n = nodes_.at(node);
  if (n.on == on) return;
  advance_to(now);
  if (!on) {
    n.pending.reset();
    ++n.timer_token;
    n.timer_at = -1;
    n.countdown_start = -1;
    n.backoff_slots = 0;
    account(n.on_ns, n.on_since, now_);
    if (n.busy_since >= 0) account(n.busy_ns, n.busy_since, now_);
    n.busy_since = -1;
    n.on = false;
  } else {
    n.on = true;
    n.on_since = now_;
    n.busy_since = busy(n) ? now_ : -1;
  }
}

int Channel::draw_backoff(NodeId node) {
  const int cw = nodes_[node].radio.cw;
  if (backoff_) return std::clamp(backoff_(node, cw), 0, cw);
  return std::uniform_int_distribution<int>(0, cw)(rng_);
}

void Channel::schedule(SimTime t, EventType type, NodeId node, std::uint64_t token) {
  events_.push({t, event_seq_++, type, node, token});
}

bool Channel::enqueue(NodeId node, std::vector<std::uint8_t> payload, std::size_t on_air_bytes, SimTime now) {
  Node& n = nodes_.at(node);
  advance_to(now);
  if (!n.on) return false;
  if (n.pending) {
    ++metrics_.drops.busy_expired;
    ++n.stats.busy_expired;
    ++n.timer_token;
    n.timer_at = -1;
    n.countdown_start = -1;
  }
  n.pending = Pending{std::make_shared<const std::vector<std::uint8_t>>(std::move(payload)),
                      n.radio.airtime(on_air_bytes)};
  n.backoff_slots = (busy(n) || n.radio.backoff_when_idle) ? draw_backoff(node) : 0;
  if (!busy(n)) arm_timer(node, now_);
  return true;
}

void Channel::arm_timer(NodeId id, SimTime now) {
  Node& n = nodes_[id];
  ++n.timer_token;
  n.countdown_start = -1;
  n.timer_is_tx = n.backoff_slots == 0;
  n.timer_at = now + n.radio.aifs();
  schedule(n.timer_at, EventType::MacTimer, id, n.timer_token);
}

void Channel::on_mac_timer(NodeId id, std::uint64_t token) {
  Node& n = nodes_[id];
  if (token != n.timer_token || !n.pending || !n.on) return;
  if (n.timer_is_tx) {
    start_tx(id);
    return;
  }
  // AIFS elapsed on an idle medium: count the backoff down slot by slot.
  ++n.timer_token;
  n.countdown_start = now_;
  n.timer_is_tx = true;
  n.timer_at = now_ + n.backoff_slots * n.radio.slot();
  schedule(n.timer_at, EventType::MacTimer, id, n.timer_token);
}

void Channel::on_medium_busy(NodeId id, SimTime now) {
  Node& n = nodes_[id];
  if (!n.pending || n.timer_at < 0) return;
  // A node due to transmit at this very instant cannot have sensed the other
  // start yet; both go out.
  if (n.timer_at <= now) return;
  if (n.countdown_start >= 0) {
    n.backoff_slots -= static_cast<int>((now - n.countdown_start) / n.radio.slot());
  } else if (n.backoff_slots == 0) {
    // Deferral interrupted before the frame went out: fall back to a backoff.
    n.backoff_slots = draw_backoff(id);
  }
  ++n.timer_token;
  n.timer_at = -1;
  n.countdown_start = -1;
}

void Channel::on_medium_idle(NodeId id, SimTime now) {
  Node& n = nodes_[id];
  if (n.pending && !n.transmitting && n.timer_at < 0) arm_timer(id, now);
}

double Channel::received_mw(const Node& from, double tx_dbm, const Node& to, bool with_shadowing) {
  double dbm = tx_dbm - path_loss_db(distance(from.position, to.position), prop_);
  if (with_shadowing && prop_.shadowing_sigma_db > 0.0) {
    dbm += std::normal_distribution<double>(0.0, prop_.shadowing_sigma_db)(rng_);
  }
  return dbm_to_mw(dbm);
}

void Channel::start_tx(NodeId id) {
  Node& n = nodes_[id];
  const SimTime airtime = n.pending->airtime;
  auto payload = std::move(n.pending->payload);
  n.pending.reset();
  n.timer_at = -1;
  n.countdown_start = -1;
  n.backoff_slots = 0;
  ++n.timer_token;
  n.transmitting = true;

  ActiveFrame f;
  f.ev.seq = tx_seq_++;
  f.ev.sender = id;
  f.ev.start = now_;
  f.ev.end = now_ + airtime;
  f.ev.tx_power_dbm = n.radio.tx_power_dbm;
  f.ev.payload = std::move(payload);
  f.ev.position = n.position;
  const std::size_t count = nodes_.size();
  f.rx_mw.assign(count, 0.0);
  f.worst_interference_mw.assign(count, 0.0);
  f.receiver_on.assign(count, 0);
  f.half_duplex.assign(count, 0);
  for (std::size_t j = 0; j < count; ++j) {
    if (j == id) continue;
    f.rx_mw[j] = received_mw(n, f.ev.tx_power_dbm, nodes_[j], true);
    f.receiver_on[j] = nodes_[j].on ? 1 : 0;
    f.half_duplex[j] = nodes_[j].transmitting ? 1 : 0;
  }
  for (auto& other : active_) {
    other.half_duplex[id] = 1;
    for (std::size_t j = 0; j < count; ++j) {
      f.worst_interference_mw[j] += other.rx_mw[j];
    }
  }
  // Interference on frames already in the air only grows at a start.
  for (auto& other : active_) {
    for (std::size_t j = 0; j < count; ++j) {
      double cur = 0.0;
      for (const auto& g : active_) {
        if (&g != &other) cur += g.rx_mw[j];
      }
      cur += f.rx_mw[j];
      other.worst_interference_mw[j] = std::max(other.worst_interference_mw[j], cur);
    }
  }

  ++n.stats.tx_packets;
  n.stats.tx_airtime += airtime;
  ++metrics_.transmissions;
  transmissions_.push_back(f.ev);
  schedule(f.ev.end, EventType::TxEnd, id, 0);
  active_.push_back(std::move(f));
  refresh_sensing(now_);
}

void Channel::end_tx(NodeId id) {
  auto it = std::find_if(active_.begin(), active_.end(), [&](const ActiveFrame& f) { return f.ev.sender == id; });
  if (it == active_.end()) return;
  ActiveFrame f = std::move(*it);
  active_.erase(it);
  Node& sender = nodes_[id];
  sender.transmitting = false;

  for (std::size_t j = 0; j < nodes_.size(); ++j) {
    if (!f.receiver_on[j] || !nodes_[j].on) continue;
    const Node& rx = nodes_[j];
    const double d = distance(f.ev.position, rx.position);
    const bool in_range = f.ev.tx_power_dbm - path_loss_db(d, prop_) >= rx.radio.rx_sensitivity_dbm;
    const ReceptionResult res =
        f.half_duplex[j] ? ReceptionResult::Collision
                         : evaluate_reception(mw_to_dbm(f.rx_mw[j]), f.worst_interference_mw[j], rx.radio);
    switch (res) {
      case ReceptionResult::Delivered:
        deliveries_.push_back({now_, id, static_cast<NodeId>(j), f.ev.payload});
        ++nodes_[j].stats.delivered;
        break;
      case ReceptionResult::BelowSensitivity: ++metrics_.drops.below_sensitivity; break;
      case ReceptionResult::Collision:
        if (!f.half_duplex[j] && f.worst_interference_mw[j] <= 0.0) {
          ++metrics_.drops.noise_limited;
        } else {
          ++metrics_.drops.collision;
        }
        break;
    }
    if (in_range) {
      const int bin = static_cast<int>(std::floor(d / metrics_.bin_width_m));
      const bool failed = res != ReceptionResult::Delivered;
      auto& b = metrics_.per_bins[bin];
      ++b.attempted;
      b.failed += failed ? 1 : 0;
      auto& lb = metrics_.per_by_link[{sender.kind, rx.kind}][bin];
      ++lb.attempted;
      lb.failed += failed ? 1 : 0;
    }
  }

  refresh_sensing(now_);
  if (sender.pending && !busy(sender)) on_medium_idle(id, now_);
}

void Channel::refresh_sensing(SimTime now) {
  for (std::size_t j = 0; j < nodes_.size(); ++j) {
    Node& n = nodes_[j];
    double mw = 0.0;
    for (const auto& f : active_) {
      if (f.ev.sender != j) mw += f.rx_mw[j];
    }
    const bool sensed = mw > dbm_to_mw(n.radio.cca_threshold_dbm);
    const bool was_sensed = n.sensed_busy;
    n.sensed_busy = sensed;

    if (n.on) {
      const bool b = busy(n);
      if (b && n.busy_since < 0) {
        n.busy_since = now;
      } else if (!b && n.busy_since >= 0) {
        account(n.busy_ns, n.busy_since, now);
        n.busy_since = -1;
      }
    }
    if (n.transmitting || sensed == was_sensed) continue;
    if (sensed) {
      on_medium_busy(static_cast<NodeId>(j), now);
    } else {
      on_medium_idle(static_cast<NodeId>(j), now);
    }
  }
}

void Channel::account(std::map<std::int64_t, SimTime>& bins, SimTime from, SimTime to) const {
  while (from < to) {
    const std::int64_t w = from / kNsPerSecond;
    const SimTime edge = std::min(to, (w + 1) * kNsPerSecond);
    bins[w] += edge - from;
    from = edge;
  }
}

void Channel::advance_to(SimTime t) {
  if (t < now_) throw InvalidInput("channel time cannot move backwards");
  run_until(t);
}

void Channel::run_until(SimTime t) {
  while (!events_.empty() && events_.top().time <= t) {
    const Event e = events_.top();
    events_.pop();
    now_ = e.time;
    if (e.type == EventType::TxEnd) {
      end_tx(e.node);
    } else {
      on_mac_timer(e.node, e.token);
    }
  }
  now_ = std::max(now_, t);
}

std::vector<Delivery> Channel::take_deliveries() {
  std::vector<Delivery> out;
  out.swap(deliveries_);
  return out;
}

std::vector<TransmissionEvent> Channel::take_transmissions() {
  std::vector<TransmissionEvent> out;
  out.swap(transmissions_);
  return out;
}

void Channel::finalize(SimTime end) {
  if (finalized_) return;
  run_until(end);
  finalized_ = true;
  for (auto& n : nodes_) {
    if (!n.on) continue;
    account(n.on_ns, n.on_since, end);
    if (n.busy_since >= 0) account(n.busy_ns, n.busy_since, end);
  }
  std::vector<CbpSample> out;
  for (std::size_t j = 0; j < nodes_.size(); ++j) {
    for (const auto& [w, on] : nodes_[j].on_ns) {
      if (on <= 0) continue;
      auto b = nodes_[j].busy_ns.find(w);
      const double busy_ns = b == nodes_[j].busy_ns.end() ? 0.0 : static_cast<double>(b->second);
      out.push_back({static_cast<double>(w), static_cast<NodeId>(j), std::min(1.0, busy_ns / on)});
    }
  }
  std::sort(out.begin(), out.end(), [](const CbpSample& a, const CbpSample& b) {
    return a.window_start_s != b.window_start_s ? a.window_start_s < b.window_start_s : a.device < b.device;
  });
  metrics_.cbp_series = std::move(out);
}

}  // namespace v2p::channel
