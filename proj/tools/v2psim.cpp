#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <thread>

#include "v2p/error.hpp"
#include "v2p/messages.hpp"
#include "v2p/scenario.hpp"

namespace {

using namespace v2p;
using namespace v2p::scenario;

enum ExitCode { kOk = 0, kConfigError = 2, kIoError = 3, kDecodeError = 4, kInternalError = 5 };

const std::map<std::string, bool> kOnOff{{"on", true}, {"off", false}};

struct SceneOptions {
  std::string scenario = "crossing";
  std::optional<std::string> config_path;
  std::optional<double> speed_kmh;
  std::optional<double> start_distance_m;
  std::optional<double> duration_s;
  std::optional<int> peds;
  std::optional<int> vehicles;
  std::optional<bool> congestion_control;
  std::optional<bool> power_control;
  bool braking = false;

  void add_to(CLI::App& cmd) {
    cmd.add_option("--scenario", scenario, "crossing, right-turn, left-turn, along-road, congestion or custom")
        ->check(CLI::IsMember({"crossing", "right-turn", "left-turn", "along-road", "congestion", "custom"}));
    cmd.add_option("--config", config_path, "JSON scenario config (see docs/config-schema.md)");
    cmd.add_option("--speed-kmh", speed_kmh, "vehicle speed");
    cmd.add_option("--start-distance", start_distance_m, "vehicle path length to the conflict point, m");
    cmd.add_option("--duration", duration_s, "simulated seconds");
    cmd.add_option("--peds", peds, "pedestrian count");
    cmd.add_option("--vehicles", vehicles, "vehicle count (congestion, custom)");
    cmd.add_option("--congestion-control", congestion_control, "on or off")->transform(CLI::CheckedTransformer(kOnOff));
    cmd.add_option("--power-control", power_control, "on or off")->transform(CLI::CheckedTransformer(kOnOff));
    cmd.add_flag("--braking", braking, "vehicles brake at d_mod once warned");
  }

  ScenarioOverrides overrides(std::optional<std::uint64_t> seed) const {
    ScenarioOverrides o;
    o.speed_kmh = speed_kmh;
    o.start_distance_m = start_distance_m;
    o.duration_s = duration_s;
    o.seed = seed;
    o.pedestrians = peds;
    o.vehicles = vehicles;
    o.congestion_control = congestion_control;
    o.power_control = power_control;
    if (braking) o.braking_response = true;
    return o;
  }

  // A config file fixes the geometry; only run-level knobs can be overridden.
  ScenarioConfig build(std::optional<std::uint64_t> seed) const {
    if (!config_path) return build_scenario(parse_kind(scenario), overrides(seed));
    if (speed_kmh || start_distance_m || peds || vehicles) {
      throw ConfigError("--speed-kmh, --start-distance, --peds and --vehicles cannot be combined with --config");
    }
    ScenarioConfig c = load_config(*config_path);
    if (seed) c.seed = *seed;
    if (duration_s) c.duration_s = *duration_s;
    if (congestion_control) c.policy.congestion_control_on = *congestion_control;
    if (power_control) c.policy.power_control_on = *power_control;
    if (braking) c.braking_response = true;
    c.validate();
    return c;
  }
};

void print_summary(const RunResult& r, std::ostream& os) {
  const auto& s = r.summary;
  auto opt = [](const std::optional<double>& v) { return v ? std::to_string(*v) : std::string("-"); };
  os << "scenario " << to_string(r.kind) << ", " << r.duration_s << " s, " << r.actor_ids.size() << " actors\n"
     << "  first advisory  t=" << opt(s.first_advisory_time_s) << " s  d_lon=" << opt(s.first_advisory_d_lon_m)
     << " m\n"
     << "  first imminent  t=" << opt(s.first_imminent_time_s) << " s  d_lon=" << opt(s.first_imminent_d_lon_m)
     << " m\n"
     << "  conflict time   " << opt(s.conflict_time_s) << " s\n"
     << "  min separation  " << s.min_separation_m << " m at t=" << s.min_separation_time_s << " s\n"
     << "  warnings " << s.warnings << ", transmissions " << s.transmissions << ", deliveries " << s.deliveries
     << ", mean CBP " << s.mean_cbp << "\n"
     << "  wall time " << s.wall_time_s << " s\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"V2P safety simulator"};
  app.require_subcommand(1);

  SceneOptions run_opts;
  std::uint64_t run_seed = 1;
  std::string run_out;
  bool dump_only = false;
  auto* run_cmd = app.add_subcommand("run", "run one scenario and write CSV outputs");
  run_opts.add_to(*run_cmd);
  run_cmd->add_option("--seed", run_seed, "random seed");
  run_cmd->add_option("--out", run_out, "output directory");
  run_cmd->add_flag("--dump-config", dump_only, "print the resolved JSON config and exit");

  SceneOptions ab_opts;
  ab_opts.scenario = "congestion";
  std::vector<std::uint64_t> ab_seeds{1, 2, 3, 4, 5};
  unsigned ab_jobs = std::max(1u, std::thread::hardware_concurrency());
  std::optional<std::string> ab_out;
  auto* ab_cmd = app.add_subcommand("ab", "paired control-off / control-on runs over several seeds");
  ab_cmd->add_option("--scenario", ab_opts.scenario, "scenario kind")
      ->check(CLI::IsMember({"crossing", "right-turn", "left-turn", "along-road", "congestion", "custom"}));
  ab_cmd->add_option("--config", ab_opts.config_path, "JSON scenario config");
  ab_cmd->add_option("--speed-kmh", ab_opts.speed_kmh, "vehicle speed");
  ab_cmd->add_option("--duration", ab_opts.duration_s, "simulated seconds");
  ab_cmd->add_option("--peds", ab_opts.peds, "pedestrian count");
  ab_cmd->add_option("--vehicles", ab_opts.vehicles, "vehicle count");
  ab_cmd->add_option("--seeds", ab_seeds, "seeds to pair")->delimiter(',');
  ab_cmd->add_option("--jobs", ab_jobs, "worker threads")->check(CLI::PositiveNumber);
  ab_cmd->add_option("--out", ab_out, "directory for ab_cbp.csv, ab_per.csv, ab_energy.csv");

  auto* msg_cmd = app.add_subcommand("msg", "message utilities");
  msg_cmd->require_subcommand(1);
  std::string hex;
  auto* inspect_cmd = msg_cmd->add_subcommand("inspect", "decode a hex-encoded BSM or PSM");
  inspect_cmd->add_option("hex", hex, "message bytes as hex")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run_cmd) {
      const ScenarioConfig cfg = run_opts.build(run_seed);
      if (dump_only) {
        std::cout << to_json(cfg);
        return kOk;
      }
      if (run_out.empty()) throw ConfigError("--out is required");
      const RunResult r = run(cfg);
      emit_outputs(r, run_out);
      save_config(cfg, std::filesystem::path(run_out) / "config.json");
      print_summary(r, std::cout);
      return kOk;
    }
    if (*ab_cmd) {
      if (ab_seeds.empty()) throw ConfigError("--seeds needs at least one seed");
      const SceneOptions opts = ab_opts;
      const auto make = [&opts](std::uint64_t seed, bool on) {
        SceneOptions arm = opts;
        arm.congestion_control = on;
        arm.power_control = on;
        return arm.build(seed);
      };
      make(ab_seeds.front(), false);  // surface config errors before starting workers
      const AbReport rep = run_ab(make, ab_seeds, ab_jobs);
      print_ab_table(rep, std::cout);
      if (ab_out) write_ab_outputs(rep, *ab_out);
      return kOk;
    }
    if (*inspect_cmd) {
      const auto bytes = messages::from_hex(hex);
      std::cout << messages::describe(messages::decode(bytes));
      return kOk;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kIoError;
  } catch (const DecodeError& e) {
    std::cerr << "decode error: " << e.what() << "\n";
    return kDecodeError;
  } catch (const InvalidInput& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kDecodeError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInternalError;
  }
  return kOk;
}
