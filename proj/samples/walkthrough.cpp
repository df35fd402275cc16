// Two interleaved flows through the TCAM data plane with one hand-written
// key segment. Flow B (10.0.0.3 <-> 10.0.0.4) carries the segment
// [512, -253, 443, -890] and is classified as class 6 on its fourth packet;
// flow A never matches and stays unresolved.

#include <cstdio>
#include <string>
#include <vector>

#include "kseg/kseg.hpp"

namespace {

kseg::KeySegment exact_segment(std::uint32_t id, kseg::ClassId cls, const std::vector<std::int16_t>& values) {
  kseg::KeySegment s;
  s.id = id;
  s.class_id = cls;
  s.effective_len = values.size();
  for (auto v : values) {
    s.slots.push_back({false, v, v});
    s.member_values.push_back({v});
  }
  s.score = 1e6;
  return s;
}

std::string show(const std::vector<std::int16_t>& w) {
  std::string out = "[";
  for (std::size_t i = 0; i < w.size(); ++i) out += (i ? ", " : "") + std::to_string(w[i]);
  return out + "]";
}

}  // namespace

int main() {
  using namespace kseg;
  const std::vector<KeySegment> segments = {exact_segment(1, 6, {512, -253, 443, -890}),
                                            exact_segment(2, 3, {100, 100, -100, -100})};
  CompiledTables tables = compile_tables(segments, 4, 2);

  BackupTree tree;  // single leaf: never reached here
  tree.nodes.push_back(DtNode{});

  SimConfig cfg;
  Simulator sim(tables, tree, cfg);

  const std::uint32_t a1 = *parse_ipv4("10.0.0.1"), a2 = *parse_ipv4("10.0.0.2");
  const std::uint32_t b1 = *parse_ipv4("10.0.0.3"), b2 = *parse_ipv4("10.0.0.4");
  const FiveTuple fa{a1, a2, 40000, 443, kProtoTcp};
  const FiveTuple fb{b1, b2, 40001, 443, kProtoTcp};
  const std::vector<PacketRecord> trace = {
      {0, fa, 60},           {1, fb, 512},           {2, fa.reversed(), 1400},
      {3, fb.reversed(), 253}, {4, fb, 443},         {5, fa, 60},
      {6, fb.reversed(), 890}, {7, fa.reversed(), 700},
  };

  std::printf("B %s\n", show(std::vector<std::int16_t>(4, 0)).c_str());
  for (const auto& pkt : trace) {
    const auto ev = sim.process_packet(pkt);
    const bool is_b = canonical_key(pkt.tuple) == canonical_key(fb);
    const FlowState* st = sim.state(pkt.tuple);
    std::printf("%s %s", is_b ? "B" : "A", st ? show(st->window).c_str() : "-");
    if (ev)
      std::printf("  -> class %d (%s) at packet %u", ev->verdict, to_string(ev->cause), ev->decision_index);
    std::printf("\n");
  }
  const auto label = sim.label(fb);
  return label && *label == 6 ? 0 : 1;
}
