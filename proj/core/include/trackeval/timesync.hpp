#pragma once

#include <array>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "trackeval/geometry.hpp"
#include "trackeval/io.hpp"

// Timestamp-offset protocol: a server streams its clock over UDP, clients
// average (recv - send - one_way_delay) into a constant clock delta.
//
// Wire format
//   server -> client stream message: 8 bytes, big-endian unsigned
//     microseconds since the Unix epoch on the server clock.
//   client -> server request: "TSYN", one opcode byte, 8 payload bytes.
//     opcode 1 (stream): u32 BE duration in ms, u32 BE rate in mHz.
//     opcode 2 (probe):  u64 BE token; the server echoes the datagram as is.
namespace trackeval::timesync {

struct SyncSample {
  double server_send_time = 0.0;  // s, server clock
  double client_recv_time = 0.0;  // s, client clock
};

struct ClockOffsetEstimate {
  double delta = 0.0;  // client_clock - server_clock, s
  double jitter_std = 0.0;
  std::size_t n_samples = 0;
  double assumed_one_way_delay = 0.0;
};

enum class Estimator { Mean, Median };

// Per-sample offset is recv - send - one_way_delay. Throws Empty.
ClockOffsetEstimate estimate_offset(std::span<const SyncSample> samples, double one_way_delay,
                                    Estimator estimator = Estimator::Mean);

// Shifts every timestamp by -delta so device time reads as reference time.
Trajectory apply_offset(const Trajectory& traj, const ClockOffsetEstimate& estimate);
std::vector<io::ImuSample> apply_offset(std::span<const io::ImuSample> samples,
                                        const ClockOffsetEstimate& estimate);

// Text record "delta_s,jitter_std_s,n_samples" (header line, then values).
std::string format_offset_record(const ClockOffsetEstimate& estimate);
ClockOffsetEstimate parse_offset_record(std::string_view text);
void write_offset_record(const std::filesystem::path& path, const ClockOffsetEstimate& estimate);
ClockOffsetEstimate read_offset_record(const std::filesystem::path& path);

struct ChannelModel {
  double base_delay = 0.0;  // one-way, s
  double jitter_std = 0.0;  // s
  double drop_probability = 0.0;
  std::uint64_t rng_seed = 0;
};

// Seeded one-way link. Delays are base + N(0, jitter), clipped at zero.
class SimulatedChannel {
 public:
  explicit SimulatedChannel(const ChannelModel& model);

  // One-way transit time, or nullopt when the datagram is dropped.
  std::optional<double> transit();

  const ChannelModel& model() const { return model_; }

 private:
  ChannelModel model_;
  std::mt19937_64 rng_;
};

struct RttResult {
  double mean_rtt = 0.0;
  double one_way_delay = 0.0;
  std::size_t n_received = 0;
};

// Round trips through the channel. Throws NoResponse when every probe is lost.
RttResult measure_rtt(SimulatedChannel& channel, std::size_t n_probes);
RttResult measure_rtt(const ChannelModel& model, std::size_t n_probes);

// Stream of server timestamps as a client would receive them, with the client
// clock running true_offset ahead of the server clock.
std::vector<SyncSample> simulate_stream(SimulatedChannel& channel, double true_offset,
                                        double duration, double rate_hz,
                                        double server_start = 0.0);

// Seconds since the Unix epoch.
using Clock = std::function<double()>;
double system_clock_seconds();

std::array<std::uint8_t, 8> encode_timestamp(std::uint64_t micros);
std::uint64_t decode_timestamp(std::span<const std::uint8_t, 8> bytes);

struct Endpoint {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;
};

// UDP timestamp server. Sessions are scheduled from one event loop, so a slow
// or departed client never delays another client's stream.
class SyncServer {
 public:
  struct Options {
    std::string bind_address = "0.0.0.0";
    std::uint16_t port = 0;  // 0 picks an ephemeral port
    Clock clock = system_clock_seconds;
    double max_duration = 60.0;
    double max_rate_hz = 1000.0;
  };

  explicit SyncServer(Options opts);
  ~SyncServer();
  SyncServer(const SyncServer&) = delete;
  SyncServer& operator=(const SyncServer&) = delete;

  std::uint16_t port() const { return port_; }
  void start();
  void stop();
  // Blocks serving on the calling thread until stop() is called elsewhere.
  void run();

  std::size_t sessions_started() const { return sessions_started_.load(); }

 private:
  void loop();

  Options opts_;
  int fd_ = -1;
  std::uint16_t port_ = 0;
  std::atomic<bool> running_{false};
  std::atomic<std::size_t> sessions_started_{0};
  std::thread worker_;
};

struct SessionOptions {
  double duration = 10.0;
  double rate_hz = 100.0;
  // Seconds to wait for the first message, and the largest tolerated gap.
  double timeout = 2.0;
  // nullopt: measure with rtt_probes echo probes before streaming.
  std::optional<double> one_way_delay;
  std::size_t rtt_probes = 20;
  Estimator estimator = Estimator::Mean;
  Clock clock = system_clock_seconds;
};

// Live echo probes against a server. Throws Timeout when nothing comes back.
RttResult probe_rtt(const Endpoint& server, std::size_t n_probes, double timeout);

// Registers with the server, consumes the stream, and averages the offsets.
// Throws Timeout when the server never answers, Io on socket failures.
ClockOffsetEstimate run_sync_session(const Endpoint& server, const SessionOptions& opts = {});

}  // namespace trackeval::timesync
