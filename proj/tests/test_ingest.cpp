#include <gtest/gtest.h>

#include <map>
#include <sstream>

#include "kseg/kseg.hpp"
#include "support.hpp"

using namespace kseg;

namespace {

std::uint32_t ip(const char* s) { return *parse_ipv4(s); }

// Little-endian microsecond pcap, assembled byte by byte.
struct PcapBuilder {
  std::vector<std::uint8_t> bytes;

  void le32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes.push_back(std::uint8_t(v >> (8 * i)));
  }
  void le16(std::uint16_t v) {
    bytes.push_back(std::uint8_t(v));
    bytes.push_back(std::uint8_t(v >> 8));
  }
  void be16(std::uint16_t v) {
    bytes.push_back(std::uint8_t(v >> 8));
    bytes.push_back(std::uint8_t(v));
  }
  PcapBuilder() {
    le32(0xa1b2c3d4);
    le16(2);
    le16(4);
    le32(0);
    le32(0);
    le32(65535);
    le32(1);
  }
  void record(std::uint32_t sec, std::uint32_t usec, const std::vector<std::uint8_t>& frame, std::uint32_t orig) {
    le32(sec);
    le32(usec);
    le32(static_cast<std::uint32_t>(frame.size()));
    le32(orig);
    bytes.insert(bytes.end(), frame.begin(), frame.end());
  }
};

std::vector<std::uint8_t> udp_frame(std::uint16_t total_len) {
  std::vector<std::uint8_t> f(14, 0);
  f[12] = 0x08;
  f[13] = 0x00;
  const std::uint8_t ip_hdr[20] = {0x45, 0, std::uint8_t(total_len >> 8), std::uint8_t(total_len), 0, 0, 0, 0, 64, 17,
                                   0,    0, 192, 168, 0, 1, 192, 168, 0, 2};
  f.insert(f.end(), ip_hdr, ip_hdr + 20);
  const std::uint8_t udp[8] = {0x13, 0x88, 0x00, 0x35, 0, 8, 0, 0};  // 5000 -> 53
  f.insert(f.end(), udp, udp + 8);
  return f;
}

}  // namespace

TEST(SignedFeature, DirectionTimesLength) {
  EXPECT_EQ(combined_feature(512, Direction::kForward).value(), 512);
  EXPECT_EQ(combined_feature(253, Direction::kReverse).value(), -253);
  EXPECT_EQ(combined_feature(1, Direction::kForward).value(), 1);
  EXPECT_EQ(combined_feature(9000, Direction::kReverse).value(), -1500);
  EXPECT_THROW(combined_feature(0, Direction::kForward), InvalidPacketError);
  EXPECT_THROW(SignedFeature::from_value(0), InvalidPacketError);
}

TEST(CanonicalKey, SymmetricAndIdempotent) {
  const FiveTuple ab{ip("10.0.0.1"), ip("10.0.0.2"), 1000, 443, kProtoTcp};
  EXPECT_EQ(canonical_key(ab), canonical_key(ab.reversed()));
  const FiveTuple c = canonical_key(ab);
  EXPECT_EQ(canonical_key(c), c);
  Rng rng(5);
  for (int i = 0; i < 1000; ++i) {
    FiveTuple t{static_cast<std::uint32_t>(rng.below(8)), static_cast<std::uint32_t>(rng.below(8)),
                static_cast<std::uint16_t>(rng.below(4)), static_cast<std::uint16_t>(rng.below(4)),
                rng.coin() ? kProtoTcp : kProtoUdp};
    ASSERT_EQ(canonical_key(t), canonical_key(t.reversed()));
  }
}

TEST(Ipv4, ParseAndFormat) {
  EXPECT_EQ(format_ipv4(ip("192.168.0.1")), "192.168.0.1");
  EXPECT_FALSE(parse_ipv4("1.2.3"));
  EXPECT_FALSE(parse_ipv4("1.2.3.256"));
  EXPECT_FALSE(parse_ipv4("1.2.3.4x"));
}

TEST(AssembleFlows, TwoDirectionsOneFlow) {
  const FiveTuple ab{ip("10.0.0.1"), ip("10.0.0.2"), 1000, 443, kProtoTcp};
  const std::vector<PacketRecord> pkts = {{0, ab, 100}, {5, ab.reversed(), 200}};
  const auto r = assemble_flows(pkts);
  ASSERT_EQ(r.flows.size(), 1u);
  EXPECT_EQ(r.flows[0].features(), (std::vector<std::int16_t>{100, -200}));
  EXPECT_EQ(r.flows[0].first_src, ab.src_addr);
}

TEST(AssembleFlows, ReverseFirstSenderIsForward) {
  const FiveTuple ab{ip("10.0.0.1"), ip("10.0.0.2"), 1000, 443, kProtoTcp};
  const std::vector<PacketRecord> pkts = {{0, ab.reversed(), 100}, {5, ab, 200}};
  const auto r = assemble_flows(pkts);
  ASSERT_EQ(r.flows.size(), 1u);
  EXPECT_EQ(r.flows[0].features(), (std::vector<std::int16_t>{100, -200}));
}

TEST(AssembleFlows, IdleTimeoutSplits) {
  const FiveTuple ab{ip("10.0.0.1"), ip("10.0.0.2"), 1000, 443, kProtoUdp};
  const std::vector<PacketRecord> pkts = {{0, ab, 100}, {100, ab, 100}, {201, ab, 100}};
  EXPECT_EQ(assemble_flows(pkts, 100).flows.size(), 2u);
  EXPECT_EQ(assemble_flows(pkts, 101).flows.size(), 1u);
}

TEST(AssembleFlows, SkipsNonTcpUdpAndZeroLength) {
  const FiveTuple icmp{1, 2, 0, 0, 1};
  const FiveTuple ab{1, 2, 3, 4, kProtoTcp};
  const std::vector<PacketRecord> pkts = {{0, icmp, 64}, {1, ab, 0}, {2, ab, 40}};
  const auto r = assemble_flows(pkts);
  EXPECT_EQ(r.skipped, 2u);
  ASSERT_EQ(r.flows.size(), 1u);
}

TEST(AssembleFlows, PartitionMatchesBruteForceGrouping) {
  Rng rng(11);
  std::vector<PacketRecord> pkts;
  for (std::uint64_t t = 0; t < 3000; ++t) {
    FiveTuple tup{static_cast<std::uint32_t>(rng.below(5)), static_cast<std::uint32_t>(5 + rng.below(5)),
                  static_cast<std::uint16_t>(rng.below(3)), 80, kProtoTcp};
    if (rng.coin()) tup = tup.reversed();
    pkts.push_back({t, tup, static_cast<std::uint16_t>(1 + rng.below(1500))});
  }
  const auto r = assemble_flows(pkts, 1'000'000);
  // Oracle: group by unordered endpoint pair, sign by first sender.
  std::map<FiveTuple, std::vector<std::int16_t>> expect;
  std::map<FiveTuple, std::uint32_t> first;
  for (const auto& p : pkts) {
    const FiveTuple a = p.tuple, b = p.tuple.reversed();
    const FiveTuple k = std::min(a, b);
    first.try_emplace(k, p.tuple.src_addr);
    const int sign = p.tuple.src_addr == first[k] ? 1 : -1;
    expect[k].push_back(static_cast<std::int16_t>(sign * std::min<int>(p.length, 1500)));
  }
  ASSERT_EQ(r.flows.size(), expect.size());
  std::size_t total = 0;
  for (const auto& f : r.flows) {
    EXPECT_EQ(f.features(), expect.at(f.key));
    total += f.packets.size();
  }
  EXPECT_EQ(total, pkts.size());
}

TEST(Pcap, HeaderOnlyIsEmpty) {
  PcapBuilder b;
  const auto r = read_pcap(b.bytes);
  EXPECT_TRUE(r.packets.empty());
  EXPECT_EQ(r.skipped.total(), 0u);
}

TEST(Pcap, SingleUdpRecordLength512) {
  PcapBuilder b;
  b.record(10, 250'000, udp_frame(512), 14 + 512);
  const auto r = read_pcap(b.bytes);
  ASSERT_EQ(r.packets.size(), 1u);
  EXPECT_EQ(r.packets[0].length, 512);
  EXPECT_EQ(r.packets[0].tuple.protocol, kProtoUdp);
  EXPECT_EQ(r.packets[0].tuple.src_port, 5000);
  EXPECT_EQ(r.packets[0].tuple.dst_port, 53);
  EXPECT_EQ(format_ipv4(r.packets[0].tuple.src_addr), "192.168.0.1");
  EXPECT_EQ(r.packets[0].timestamp_ms, 0u);
}

TEST(Pcap, ArpSkippedUdpKept) {
  PcapBuilder b;
  std::vector<std::uint8_t> arp(42, 0);
  arp[12] = 0x08;
  arp[13] = 0x06;
  b.record(0, 0, arp, 42);
  b.record(0, 5000, udp_frame(100), 114);
  const auto r = read_pcap(b.bytes);
  ASSERT_EQ(r.packets.size(), 1u);
  EXPECT_EQ(r.skipped.non_ipv4, 1u);
  EXPECT_EQ(r.packets[0].timestamp_ms, 5u);
}

TEST(Pcap, TruncationAndBadMagic) {
  PcapBuilder b;
  b.record(0, 0, udp_frame(100), 114);
  auto cut = b.bytes;
  cut.resize(cut.size() - 3);
  EXPECT_THROW(read_pcap(cut), TruncationError);
  auto bad = b.bytes;
  bad[0] = 0;
  EXPECT_THROW(read_pcap(bad), FormatError);
  EXPECT_THROW(read_pcap(std::vector<std::uint8_t>(10, 0)), TruncationError);
}

TEST(Pcap, WriterRoundTrip) {
  const FiveTuple ab{ip("10.0.0.1"), ip("10.0.0.2"), 1000, 443, kProtoTcp};
  const FiveTuple cd{ip("10.0.0.3"), ip("10.0.0.4"), 53, 5353, kProtoUdp};
  const std::vector<PacketRecord> pkts = {{0, ab, 60}, {1500, cd, 1200}, {2001, ab.reversed(), 1500}};
  const auto r = read_pcap(write_pcap(pkts));
  EXPECT_EQ(r.packets, pkts);
}

TEST(FlowRecords, RoundTripGeneratedDataset) {
  SynthConfig cfg;
  cfg.num_classes = 3;
  cfg.flows_per_class = 20;
  cfg.planted_motifs = make_random_motifs(3, 1, 32, 9);
  const auto ds = generate_synthetic(cfg);
  const std::string text = write_flow_records(ds.flows);
  EXPECT_EQ(read_flow_records(text), ds.flows);
  EXPECT_EQ(write_flow_records(read_flow_records(text)), text);
}

TEST(FlowRecords, EmptyAndInvalid) {
  EXPECT_TRUE(read_flow_records(std::string()).empty());
  const std::string zero =
      R"({"label":0,"key":{"src":"10.0.0.1","dst":"10.0.0.2","sport":1,"dport":2,"proto":6},)"
      R"("first_src":"10.0.0.1","packets":[[0,100],[1,0]]})";
  EXPECT_THROW(read_flow_records(zero + "\n"), ParseError);
  EXPECT_THROW(read_flow_records(std::string("{not json\n")), ParseError);
}

TEST(Split, RatioArithmetic) {
  std::vector<BidiFlow> flows(100);
  for (std::size_t i = 0; i < flows.size(); ++i) {
    flows[i].key.src_port = static_cast<std::uint16_t>(i);
    flows[i].label = 0;
  }
  const auto s = split_dataset(flows, {}, 7);
  EXPECT_EQ(s.train.size(), 80u);
  EXPECT_EQ(s.validation.size(), 10u);
  EXPECT_EQ(s.test.size(), 10u);
  const auto again = split_dataset(flows, {}, 7);
  EXPECT_EQ(s.train, again.train);
  EXPECT_EQ(s.test, again.test);
  EXPECT_THROW(split_dataset(flows, {0.5, 0.5, 0.5}, 7), ConfigError);
}

TEST(Split, PerClassCountsWithinOne) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<BidiFlow> flows;
    std::map<ClassId, std::size_t> n;
    const std::size_t total = 30 + rng.below(300);
    for (std::size_t i = 0; i < total; ++i) {
      BidiFlow f;
      f.key.src_port = static_cast<std::uint16_t>(i);
      f.label = static_cast<ClassId>(rng.below(4));
      ++n[*f.label];
      flows.push_back(f);
    }
    const SplitRatios r{0.7, 0.2, 0.1};
    const auto s = split_dataset(flows, r, rng.next_u64());
    std::map<ClassId, std::size_t> val, test;
    for (const auto& f : s.validation) ++val[*f.label];
    for (const auto& f : s.test) ++test[*f.label];
    for (const auto& [c, k] : n) {
      if (k < 3) continue;
      EXPECT_LE(std::abs(double(val[c]) - 0.2 * double(k)), 1.0);
      EXPECT_LE(std::abs(double(test[c]) - 0.1 * double(k)), 1.0);
    }
    EXPECT_EQ(s.train.size() + s.validation.size() + s.test.size(), total);
  }
}

TEST(Synth, DegenerateConfigIsTheMotif) {
  SynthConfig cfg;
  cfg.num_classes = 1;
  cfg.flows_per_class = 3;
  cfg.planted_motifs = {{{100, -200}}};
  cfg.motif_jitter = 0;
  cfg.noise_len_range = {0, 0};
  const auto ds = generate_synthetic(cfg);
  ASSERT_EQ(ds.flows.size(), 3u);
  for (const auto& f : ds.flows) EXPECT_EQ(f.features(), (std::vector<std::int16_t>{100, -200}));
}

TEST(Synth, DeterministicAndEveryFlowCarriesItsMotif) {
  SynthConfig cfg;
  cfg.num_classes = 4;
  cfg.flows_per_class = 50;
  cfg.planted_motifs = make_random_motifs(4, 2, 32, 21);
  cfg.seed = 99;
  const auto a = generate_synthetic(cfg);
  const auto b = generate_synthetic(cfg);
  EXPECT_EQ(a.flows, b.flows);
  for (const auto& f : a.flows) {
    const auto feats = f.features();
    bool found = false;
    for (const auto& m : cfg.planted_motifs[static_cast<std::size_t>(*f.label)])
      for (std::size_t s = 0; s + m.size() <= feats.size() && !found; ++s) {
        bool all = true;
        for (std::size_t i = 0; i < m.size(); ++i) all = all && std::abs(feats[s + i] - m[i]) <= 32;
        found = all;
      }
    EXPECT_TRUE(found);
  }
}

TEST(Synth, DecoysCarryForeignMotifs) {
  SynthConfig cfg;
  cfg.num_classes = 2;
  cfg.flows_per_class = 400;
  cfg.planted_motifs = make_random_motifs(2, 1, 0, 4);
  cfg.motif_jitter = 0;
  cfg.decoy_rates = {0.5, 0.0};
  const auto ds = generate_synthetic(cfg);
  std::size_t with_decoy = 0, class1 = 0;
  const auto& m0 = cfg.planted_motifs[0][0];
  const auto& m1 = cfg.planted_motifs[1][0];
  auto contains = [](const std::vector<std::int16_t>& f, const Motif& m) {
    return std::search(f.begin(), f.end(), m.begin(), m.end()) != f.end();
  };
  for (const auto& f : ds.flows) {
    if (*f.label == 0) {
      EXPECT_FALSE(contains(f.features(), m1));
      continue;
    }
    ++class1;
    with_decoy += contains(f.features(), m0);
  }
  EXPECT_NEAR(double(with_decoy) / double(class1), 0.5, 0.1);
  cfg.decoy_rates = {0.5};
  EXPECT_THROW(generate_synthetic(cfg), ConfigError);
}

TEST(Rng, DerivedSeedsDiffer) {
  EXPECT_NE(derive_seed(1, 1), derive_seed(1, 2));
  EXPECT_NE(derive_seed(1, 1), derive_seed(2, 1));
  EXPECT_EQ(derive_seed(42, 3), derive_seed(42, 3));
  Rng a(7), b(7);
  for (int i = 0; i < 100; ++i) ASSERT_EQ(a.uniform_int(-5, 5), b.uniform_int(-5, 5));
}
