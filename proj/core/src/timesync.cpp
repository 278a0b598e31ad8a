#include "trackeval/timesync.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include "trackeval/error.hpp"

namespace trackeval::timesync {

ClockOffsetEstimate estimate_offset(std::span<const SyncSample> samples, double one_way_delay,
                                    Estimator estimator) {
  if (samples.empty()) {
    throw Error(ErrorCode::Empty, "no synchronization samples");
  }
  std::vector<double> offsets;
  offsets.reserve(samples.size());
  double mean = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double o = samples[i].client_recv_time - samples[i].server_send_time - one_way_delay;
    offsets.push_back(o);
    mean += (o - mean) / static_cast<double>(i + 1);
  }
  double ss = 0.0;
  for (double o : offsets) ss += (o - mean) * (o - mean);

  ClockOffsetEstimate est;
  est.n_samples = samples.size();
  est.assumed_one_way_delay = one_way_delay;
  est.jitter_std = samples.size() > 1 ? std::sqrt(ss / static_cast<double>(samples.size() - 1)) : 0.0;
  if (estimator == Estimator::Mean) {
    est.delta = mean;
  } else {
    std::sort(offsets.begin(), offsets.end());
    const std::size_t n = offsets.size();
    est.delta = n % 2 ? offsets[n / 2] : 0.5 * (offsets[n / 2 - 1] + offsets[n / 2]);
  }
  return est;
}

Trajectory apply_offset(const Trajectory& traj, const ClockOffsetEstimate& estimate) {
  std::vector<PoseSample> out(traj.samples().begin(), traj.samples().end());
  for (auto& s : out) s.timestamp -= estimate.delta;
  return Trajectory(std::move(out), traj.labels());
}

std::vector<io::ImuSample> apply_offset(std::span<const io::ImuSample> samples,
                                        const ClockOffsetEstimate& estimate) {
  std::vector<io::ImuSample> out(samples.begin(), samples.end());
  for (auto& s : out) s.timestamp -= estimate.delta;
  return out;
}

std::string format_offset_record(const ClockOffsetEstimate& estimate) {
  return "delta_s,jitter_std_s,n_samples\n" + io::format_real(estimate.delta) + "," +
         io::format_real(estimate.jitter_std) + "," + std::to_string(estimate.n_samples) + "\n";
}

ClockOffsetEstimate parse_offset_record(std::string_view text) {
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;
    const auto fields = io::split_fields(line);
    if (fields.size() != 3) {
      throw Error(ErrorCode::Parse, "offset record needs 3 fields", line_no);
    }
    const auto delta = io::parse_real(fields[0]);
    if (!delta) {
      if (fields[0] == "delta_s") continue;
      throw Error(ErrorCode::Parse, "non-numeric delta", line_no);
    }
    const auto jitter = io::parse_real(fields[1]);
    const auto n = io::parse_real(fields[2]);
    if (!jitter || !n || *jitter < 0.0 || *n < 1.0 || std::floor(*n) != *n) {
      throw Error(ErrorCode::Parse, "bad jitter or sample count", line_no);
    }
    ClockOffsetEstimate est;
    est.delta = *delta;
    est.jitter_std = *jitter;
    est.n_samples = static_cast<std::size_t>(*n);
    return est;
  }
  throw Error(ErrorCode::Parse, "empty offset record");
}

void write_offset_record(const std::filesystem::path& path, const ClockOffsetEstimate& estimate) {
  io::write_text_atomic(path, format_offset_record(estimate));
}

ClockOffsetEstimate read_offset_record(const std::filesystem::path& path) {
  return parse_offset_record(io::read_text(path));
}

SimulatedChannel::SimulatedChannel(const ChannelModel& model) : model_(model), rng_(model.rng_seed) {
  if (!(model.base_delay >= 0.0) || !(model.jitter_std >= 0.0) ||
      !(model.drop_probability >= 0.0 && model.drop_probability <= 1.0)) {
    throw Error(ErrorCode::BadSpec, "channel model out of range");
  }
}

std::optional<double> SimulatedChannel::transit() {
  if (model_.drop_probability > 0.0) {
    std::bernoulli_distribution drop(model_.drop_probability);
    if (drop(rng_)) return std::nullopt;
  }
  double delay = model_.base_delay;
  if (model_.jitter_std > 0.0) {
    std::normal_distribution<double> jitter(0.0, model_.jitter_std);
    delay += jitter(rng_);
  }
  return std::max(delay, 0.0);
}

RttResult measure_rtt(SimulatedChannel& channel, std::size_t n_probes) {
  if (n_probes == 0) {
    throw Error(ErrorCode::BadSpec, "need at least one probe");
  }
  RttResult r;
  for (std::size_t i = 0; i < n_probes; ++i) {
    const auto out = channel.transit();
    if (!out) continue;
    const auto back = channel.transit();
    if (!back) continue;
    ++r.n_received;
    r.mean_rtt += (*out + *back - r.mean_rtt) / static_cast<double>(r.n_received);
  }
  if (r.n_received == 0) {
    throw Error(ErrorCode::NoResponse, "all " + std::to_string(n_probes) + " probes dropped");
  }
  r.one_way_delay = r.mean_rtt / 2.0;
  return r;
}

RttResult measure_rtt(const ChannelModel& model, std::size_t n_probes) {
  SimulatedChannel channel(model);
  return measure_rtt(channel, n_probes);
}

std::vector<SyncSample> simulate_stream(SimulatedChannel& channel, double true_offset,
                                        double duration, double rate_hz, double server_start) {
  if (!(duration > 0.0) || !(rate_hz > 0.0)) {
    throw Error(ErrorCode::BadSpec, "stream duration and rate must be positive");
  }
  const auto n = static_cast<std::size_t>(std::llround(duration * rate_hz));
  std::vector<SyncSample> out;
  out.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double send = server_start + static_cast<double>(k) / rate_hz;
    if (auto d = channel.transit()) {
      out.push_back({send, send + *d + true_offset});
    }
  }
  return out;
}

double system_clock_seconds() {
  using namespace std::chrono;
  return duration<double>(system_clock::now().time_since_epoch()).count();
}

std::array<std::uint8_t, 8> encode_timestamp(std::uint64_t micros) {
  std::array<std::uint8_t, 8> out{};
  for (int i = 7; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(micros & 0xffu);
    micros >>= 8;
  }
  return out;
}

std::uint64_t decode_timestamp(std::span<const std::uint8_t, 8> bytes) {
  std::uint64_t v = 0;
  for (auto b : bytes) v = (v << 8) | b;
  return v;
}

namespace {

constexpr std::uint8_t kMagic[4] = {'T', 'S', 'Y', 'N'};
constexpr std::uint8_t kOpStream = 1;
constexpr std::uint8_t kOpProbe = 2;
constexpr std::size_t kRequestSize = 13;

using steady = std::chrono::steady_clock;

double seconds_since(steady::time_point t0) {
  return std::chrono::duration<double>(steady::now() - t0).count();
}

class Socket {
 public:
  Socket() : fd_(::socket(AF_INET, SOCK_DGRAM, 0)) {
    if (fd_ < 0) throw Error(ErrorCode::Io, std::string("socket: ") + std::strerror(errno));
  }
  ~Socket() {
    if (fd_ >= 0) ::close(fd_);
  }
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;
  int fd() const { return fd_; }
  int release() {
    int f = fd_;
    fd_ = -1;
    return f;
  }

 private:
  int fd_;
};

sockaddr_in resolve(const std::string& host, std::uint16_t port) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_DGRAM;
  addrinfo* res = nullptr;
  const int rc = ::getaddrinfo(host.c_str(), nullptr, &hints, &res);
  if (rc != 0 || res == nullptr) {
    throw Error(ErrorCode::Io, "cannot resolve '" + host + "': " + ::gai_strerror(rc));
  }
  sockaddr_in addr{};
  std::memcpy(&addr, res->ai_addr, sizeof(addr));
  ::freeaddrinfo(res);
  addr.sin_port = htons(port);
  return addr;
}

void put_u32(std::uint8_t* p, std::uint32_t v) {
  p[0] = static_cast<std::uint8_t>(v >> 24);
  p[1] = static_cast<std::uint8_t>(v >> 16);
  p[2] = static_cast<std::uint8_t>(v >> 8);
  p[3] = static_cast<std::uint8_t>(v);
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) |
         std::uint32_t{p[3]};
}

std::array<std::uint8_t, kRequestSize> make_request(std::uint8_t op) {
  std::array<std::uint8_t, kRequestSize> req{};
  std::copy(std::begin(kMagic), std::end(kMagic), req.begin());
  req[4] = op;
  return req;
}

bool is_request(const std::uint8_t* buf, ssize_t len) {
  return len == static_cast<ssize_t>(kRequestSize) && std::equal(std::begin(kMagic), std::end(kMagic), buf);
}

// Waits up to timeout_s for a datagram on fd. Returns its length, or -1 on timeout.
ssize_t receive(int fd, std::uint8_t* buf, std::size_t cap, double timeout_s) {
  const auto t0 = steady::now();
  while (true) {
    const double left = timeout_s - seconds_since(t0);
    if (left <= 0.0) return -1;
    pollfd pfd{fd, POLLIN, 0};
    const int rc = ::poll(&pfd, 1, static_cast<int>(std::ceil(left * 1000.0)));
    if (rc < 0) {
      if (errno == EINTR) continue;
      throw Error(ErrorCode::Io, std::string("poll: ") + std::strerror(errno));
    }
    if (rc == 0) return -1;
    const ssize_t n = ::recv(fd, buf, cap, 0);
    if (n >= 0) return n;
    // ICMP port unreachable surfaces here on a connected socket; the server
    // may still come up within the timeout.
    if (errno == ECONNREFUSED || errno == EINTR || errno == EAGAIN) continue;
    throw Error(ErrorCode::Io, std::string("recv: ") + std::strerror(errno));
  }
}

void send_all(int fd, const std::uint8_t* buf, std::size_t len) {
  if (::send(fd, buf, len, 0) < 0 && errno != ECONNREFUSED) {
    throw Error(ErrorCode::Io, std::string("send: ") + std::strerror(errno));
  }
}

int connect_to(const Endpoint& server, Socket& sock) {
  const sockaddr_in addr = resolve(server.host, server.port);
  if (::connect(sock.fd(), reinterpret_cast<const sockaddr*>(&addr), sizeof(addr)) < 0) {
    throw Error(ErrorCode::Io, std::string("connect: ") + std::strerror(errno));
  }
  return sock.fd();
}

RttResult probe_on(int fd, std::size_t n_probes, double timeout) {
  RttResult r;
  const double per_probe = std::min(timeout, 0.5);
  const auto start = steady::now();
  std::uint8_t buf[64];
  for (std::uint64_t token = 1; token <= n_probes; ++token) {
    auto req = make_request(kOpProbe);
    const auto tok = encode_timestamp(token);
    std::copy(tok.begin(), tok.end(), req.begin() + 5);
    const auto t0 = steady::now();
    send_all(fd, req.data(), req.size());
    while (true) {
      const double left = per_probe - seconds_since(t0);
      const ssize_t n = left > 0.0 ? receive(fd, buf, sizeof(buf), left) : -1;
      if (n < 0) break;
      if (is_request(buf, n) && buf[4] == kOpProbe &&
          decode_timestamp(std::span<const std::uint8_t, 8>(buf + 5, 8)) == token) {
        ++r.n_received;
        r.mean_rtt += (seconds_since(t0) - r.mean_rtt) / static_cast<double>(r.n_received);
        break;
      }
    }
    if (r.n_received == 0 && seconds_since(start) > timeout) break;
  }
  if (r.n_received == 0) {
    throw Error(ErrorCode::Timeout, "no probe answered within " + io::format_real(timeout) + " s");
  }
  r.one_way_delay = r.mean_rtt / 2.0;
  return r;
}

}  // namespace

SyncServer::SyncServer(Options opts) : opts_(std::move(opts)) {
  Socket sock;
  const int one = 1;
  ::setsockopt(sock.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in addr = resolve(opts_.bind_address, opts_.port);
  if (::bind(sock.fd(), reinterpret_cast<const sockaddr*>(&addr), sizeof(addr)) < 0) {
    throw Error(ErrorCode::Io, std::string("bind: ") + std::strerror(errno));
  }
  socklen_t len = sizeof(addr);
  ::getsockname(sock.fd(), reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
  ::fcntl(sock.fd(), F_SETFL, ::fcntl(sock.fd(), F_GETFL) | O_NONBLOCK);
  fd_ = sock.release();
}

SyncServer::~SyncServer() {
  stop();
  if (fd_ >= 0) ::close(fd_);
}

void SyncServer::start() {
  if (running_.exchange(true)) return;
  worker_ = std::thread([this] { loop(); });
}

void SyncServer::stop() {
  running_ = false;
  if (worker_.joinable()) worker_.join();
}

void SyncServer::run() {
  running_ = true;
  loop();
}

void SyncServer::loop() {
  struct Session {
    sockaddr_in peer{};
    steady::time_point next;
    steady::time_point end;
    std::chrono::nanoseconds interval{};
  };
  std::vector<Session> sessions;
  std::uint8_t buf[64];

  auto same_peer = [](const sockaddr_in& a, const sockaddr_in& b) {
    return a.sin_addr.s_addr == b.sin_addr.s_addr && a.sin_port == b.sin_port;
  };

  while (running_) {
    auto now = steady::now();
    auto wait = std::chrono::milliseconds(20);
    for (const auto& s : sessions) {
      auto until = std::chrono::duration_cast<std::chrono::milliseconds>(s.next - now);
      wait = std::min(wait, std::max(until, std::chrono::milliseconds(0)));
    }
    pollfd pfd{fd_, POLLIN, 0};
    ::poll(&pfd, 1, static_cast<int>(wait.count()));

    while (true) {
      sockaddr_in peer{};
      socklen_t plen = sizeof(peer);
      const ssize_t n = ::recvfrom(fd_, buf, sizeof(buf), 0, reinterpret_cast<sockaddr*>(&peer), &plen);
      if (n < 0) break;
      if (!is_request(buf, n)) continue;
      if (buf[4] == kOpProbe) {
        ::sendto(fd_, buf, static_cast<std::size_t>(n), 0, reinterpret_cast<const sockaddr*>(&peer), plen);
      } else if (buf[4] == kOpStream) {
        const double duration = std::min(get_u32(buf + 5) / 1000.0, opts_.max_duration);
        const double rate = std::min(get_u32(buf + 9) / 1000.0, opts_.max_rate_hz);
        if (!(duration > 0.0) || !(rate > 0.0)) continue;
        std::erase_if(sessions, [&](const Session& s) { return same_peer(s.peer, peer); });
        const auto t = steady::now();
        Session s;
        s.peer = peer;
        s.next = t;
        s.interval = std::chrono::nanoseconds(static_cast<std::int64_t>(1e9 / rate));
        s.end = t + std::chrono::nanoseconds(static_cast<std::int64_t>(duration * 1e9));
        sessions.push_back(s);
        ++sessions_started_;
      }
    }

    now = steady::now();
    for (auto& s : sessions) {
      while (s.next <= now && s.next < s.end) {
        const double t = opts_.clock();
        const auto micros = static_cast<std::uint64_t>(std::llround(std::max(t, 0.0) * 1e6));
        const auto msg = encode_timestamp(micros);
        ::sendto(fd_, msg.data(), msg.size(), 0, reinterpret_cast<const sockaddr*>(&s.peer),
                 sizeof(s.peer));
        s.next += s.interval;
      }
    }
    std::erase_if(sessions, [](const Session& s) { return s.next >= s.end; });
  }
}

RttResult probe_rtt(const Endpoint& server, std::size_t n_probes, double timeout) {
  if (n_probes == 0) {
    throw Error(ErrorCode::BadSpec, "need at least one probe");
  }
  Socket sock;
  return probe_on(connect_to(server, sock), n_probes, timeout);
}

ClockOffsetEstimate run_sync_session(const Endpoint& server, const SessionOptions& opts) {
  if (!(opts.duration > 0.0) || !(opts.rate_hz > 0.0) || !(opts.timeout > 0.0)) {
    throw Error(ErrorCode::BadSpec, "session duration, rate and timeout must be positive");
  }
  Socket sock;
  const int fd = connect_to(server, sock);

  double owd = 0.0;
  if (opts.one_way_delay) {
    owd = *opts.one_way_delay;
  } else {
    owd = probe_on(fd, std::max<std::size_t>(opts.rtt_probes, 1), opts.timeout).one_way_delay;
  }

  auto req = make_request(kOpStream);
  put_u32(req.data() + 5, static_cast<std::uint32_t>(std::llround(opts.duration * 1000.0)));
  put_u32(req.data() + 9, static_cast<std::uint32_t>(std::llround(opts.rate_hz * 1000.0)));

  const auto expected = static_cast<std::size_t>(std::ceil(opts.duration * opts.rate_hz));
  std::vector<SyncSample> samples;
  samples.reserve(expected);
  std::uint8_t buf[64];

  const auto start = steady::now();
  send_all(fd, req.data(), req.size());
  auto last_send = start;
  while (samples.empty()) {
    if (seconds_since(start) > opts.timeout) {
      throw Error(ErrorCode::Timeout, "no timestamp stream from " + server.host + ":" +
                                          std::to_string(server.port));
    }
    const ssize_t n = receive(fd, buf, sizeof(buf), 0.1);
    if (n == 8) {
      const double recv = opts.clock();
      const auto micros = decode_timestamp(std::span<const std::uint8_t, 8>(buf, 8));
      samples.push_back({static_cast<double>(micros) * 1e-6, recv});
    } else if (seconds_since(last_send) > 0.5) {
      send_all(fd, req.data(), req.size());
      last_send = steady::now();
    }
  }

  const auto first = steady::now();
  while (samples.size() < expected) {
    const double left = opts.duration + opts.timeout - seconds_since(first);
    if (left <= 0.0) break;
    const ssize_t n = receive(fd, buf, sizeof(buf), std::min(left, opts.timeout));
    if (n < 0) break;
    if (n != 8) continue;
    const double recv = opts.clock();
    const auto micros = decode_timestamp(std::span<const std::uint8_t, 8>(buf, 8));
    samples.push_back({static_cast<double>(micros) * 1e-6, recv});
  }
  return estimate_offset(samples, owd, opts.estimator);
}

}  // namespace trackeval::timesync
