#pragma once

// Discrete-event model of a shared 10 MHz DSRC channel: log-distance
// propagation, carrier sensing, EDCA-style broadcast contention (no ACKs, no
// retries), SINR-based reception, and PER / CBP bookkeeping.
//
// Time is kept in integer nanoseconds so event ordering is exact.

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <queue>
#include <random>
#include <vector>

#include "v2p/geo.hpp"

namespace v2p::channel {

using NodeId = std::uint32_t;
using SimTime = std::int64_t;  // ns

inline constexpr SimTime kNsPerSecond = 1'000'000'000;
inline constexpr SimTime kNsPerMicro = 1'000;

SimTime from_seconds(double s);
double to_seconds(SimTime t);

struct RadioConfig {
  double tx_power_dbm = 20.0;
  double bitrate_bps = 6e6;
  double bandwidth_hz = 10e6;
  int aifsn = 7;
  int cw = 15;
  double slot_time_us = 13.0;
  double sifs_us = 32.0;
  double cca_threshold_dbm = -94.0;
  double rx_sensitivity_dbm = -92.0;
  double sinr_threshold_db = 10.0;
  double preamble_us = 40.0;
  double noise_floor_dbm = -99.0;
  /// Draw a backoff even when the medium is idle on arrival. Off by default:
  /// a frame arriving to an idle medium goes out after AIFS.
  bool backoff_when_idle = false;

  static RadioConfig vehicle();
  static RadioConfig phone();

  void validate() const;
  SimTime slot() const;
  SimTime aifs() const;
  /// Preamble plus payload bits at the configured bit rate.
  SimTime airtime(std::size_t on_air_bytes) const;

  bool operator==(const RadioConfig&) const = default;
};

struct PropagationConfig {
  double pl0_db = 47.86;  // free space at 1 m, 5.9 GHz
  double exponent = 2.2;
  double ref_distance_m = 1.0;
  double min_distance_m = 0.1;
  double shadowing_sigma_db = 0.0;  // log-normal shadowing, off by default

  bool operator==(const PropagationConfig&) const = default;
};

double path_loss_db(double distance_m, const PropagationConfig& prop = {});

double dbm_to_mw(double dbm);
double mw_to_dbm(double mw);

enum class ReceptionResult { Delivered, BelowSensitivity, Collision };
const char* to_string(ReceptionResult r);

/// Reception rule for one frame at one receiver. `interference_mw` is the
/// worst (largest) co-channel power seen during the frame, noise excluded.
ReceptionResult evaluate_reception(double rx_power_dbm, double interference_mw, const RadioConfig& rx);

enum class NodeKind : std::uint8_t { Vehicle = 0, Phone = 1 };
const char* to_string(NodeKind k);

struct PerBin {
  std::uint64_t attempted = 0;
  std::uint64_t failed = 0;
  double per() const { return attempted == 0 ? 0.0 : static_cast<double>(failed) / attempted; }
};

struct CbpSample {
  double window_start_s = 0.0;
  NodeId device = 0;
  double cbp = 0.0;
};

struct DropCauses {
  std::uint64_t below_sensitivity = 0;
  std::uint64_t collision = 0;     // SINR short with at least one interferer
  std::uint64_t noise_limited = 0; // SINR short against the noise floor alone
  std::uint64_t busy_expired = 0;
};

struct NodeStats {
  std::uint64_t tx_packets = 0;
  SimTime tx_airtime = 0;
  std::uint64_t delivered = 0;  // frames this node received successfully
  std::uint64_t busy_expired = 0;
};

struct ChannelMetrics {
  double bin_width_m = 10.0;
  /// Keyed by bin index (distance / bin_width_m, floored).
  std::map<int, PerBin> per_bins;
  /// Same, split by (sender kind, receiver kind).
  std::map<std::pair<NodeKind, NodeKind>, std::map<int, PerBin>> per_by_link;
  std::vector<CbpSample> cbp_series;
  DropCauses drops;
  std::uint64_t transmissions = 0;

  /// Re-bins per_bins to a coarser width (a multiple of bin_width_m).
  std::map<int, PerBin> aggregated(double width_m) const;
  std::map<int, PerBin> aggregated(double width_m, NodeKind from, NodeKind to) const;
};

struct TransmissionEvent {
  std::uint64_t seq = 0;
  NodeId sender = 0;
  SimTime start = 0;
  SimTime end = 0;
  double tx_power_dbm = 0.0;
  std::shared_ptr<const std::vector<std::uint8_t>> payload;
  geo::EnuPosition position{};
};

struct Delivery {
  SimTime time = 0;  // end of the frame
  NodeId sender = 0;
  NodeId receiver = 0;
  std::shared_ptr<const std::vector<std::uint8_t>> payload;
};

/// Source of backoff draws, uniform in [0, cw]. Replaceable for tests.
using BackoffSource = std::function<int(NodeId node, int cw)>;

class Channel {
 public:
  explicit Channel(PropagationConfig prop = {}, std::uint64_t seed = 1, double per_bin_width_m = 10.0);

  NodeId add_node(NodeKind kind, const RadioConfig& radio, const geo::EnuPosition& position);
  std::size_t node_count() const { return nodes_.size(); }

  void set_position(NodeId node, const geo::EnuPosition& position);
  /// Calls taking `now` first process events up to it and throw InvalidInput
  /// when `now` is earlier than the channel clock.
  /// Turning a radio off drops its pending frame; a frame already on air finishes.
  void set_radio_on(NodeId node, bool on, SimTime now);
  void set_tx_power(NodeId node, double dbm);
  bool radio_on(NodeId node) const;
  const RadioConfig& radio(NodeId node) const;

  void set_backoff_source(BackoffSource source) { backoff_ = std::move(source); }

  /// Hands a frame to the node's MAC at `now`. A previous frame that has not
  /// started transmitting yet is dropped (busy_expired). Ignored when the
  /// radio is off; returns false in that case.
  bool enqueue(NodeId node, std::vector<std::uint8_t> payload, std::size_t on_air_bytes, SimTime now);

  /// Processes every event with time <= t.
  void run_until(SimTime t);
  SimTime now() const { return now_; }

  std::vector<Delivery> take_deliveries();
  /// Every frame put on air so far, in start order (cleared by take_transmissions).
  std::vector<TransmissionEvent> take_transmissions();

  /// Closes busy-time accounting at `end` and fills metrics().cbp_series.
  void finalize(SimTime end);

  const ChannelMetrics& metrics() const { return metrics_; }
  const NodeStats& stats(NodeId node) const;
  bool medium_busy(NodeId node) const;

 private:
  struct Pending {
    std::shared_ptr<const std::vector<std::uint8_t>> payload;
    SimTime airtime = 0;
  };

  struct Node {
    NodeKind kind = NodeKind::Vehicle;
    RadioConfig radio;
    geo::EnuPosition position{};
    bool on = true;
    std::optional<Pending> pending;
    int backoff_slots = 0;
    bool transmitting = false;
    bool sensed_busy = false;
    // Scheduled MAC timer: AIFS end, or the end of the slot countdown.
    std::uint64_t timer_token = 0;
    SimTime timer_at = -1;
    bool timer_is_tx = false;
    SimTime countdown_start = -1;
    // Busy-time accounting for CBP.
    SimTime busy_since = -1;
    SimTime on_since = 0;
    std::map<std::int64_t, SimTime> busy_ns;
    std::map<std::int64_t, SimTime> on_ns;
    NodeStats stats;
  };

  struct ActiveFrame {
    TransmissionEvent ev;
    std::vector<double> rx_mw;  // received power at each node
    std::vector<double> worst_interference_mw;
    std::vector<char> receiver_on;
    std::vector<char> half_duplex;
  };

  enum class EventType { MacTimer, TxEnd };
  struct Event {
    SimTime time;
    std::uint64_t seq;
    EventType type;
    NodeId node;
    std::uint64_t token;
    // At equal times frame ends come first, so a frame starting exactly when
    // another ends does not overlap it.
    bool operator>(const Event& o) const {
      if (time != o.time) return time > o.time;
      if (type != o.type) return type == EventType::MacTimer;
      return seq > o.seq;
    }
  };

  void advance_to(SimTime t);
  bool busy(const Node& n) const { return n.transmitting || n.sensed_busy; }
  int draw_backoff(NodeId node);
  void schedule(SimTime t, EventType type, NodeId node, std::uint64_t token);
  void arm_timer(NodeId id, SimTime now);
  void on_mac_timer(NodeId id, std::uint64_t token);
  void start_tx(NodeId id);
  void end_tx(NodeId id);
  void refresh_sensing(SimTime now);
  void on_medium_busy(NodeId id, SimTime now);
  void on_medium_idle(NodeId id, SimTime now);
  void account(std::map<std::int64_t, SimTime>& bins, SimTime from, SimTime to) const;
  double received_mw(const Node& from, double tx_dbm, const Node& to, bool with_shadowing);

  PropagationConfig prop_;
  std::mt19937_64 rng_;
  BackoffSource backoff_;
  std::vector<Node> nodes_;
  std::vector<ActiveFrame> active_;
  std::priority_queue<Event, std::vector<Event>, std::greater<>> events_;
  std::uint64_t event_seq_ = 0;
  std::uint64_t tx_seq_ = 0;
  SimTime now_ = 0;
  std::vector<Delivery> deliveries_;
  std::vector<TransmissionEvent> transmissions_;
  ChannelMetrics metrics_;
  bool finalized_ = false;
};

}  // namespace v2p::channel
