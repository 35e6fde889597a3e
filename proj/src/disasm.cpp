#include "malfuse/disasm.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <sstream>

namespace malfuse::disasm {

static std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  return s;
}

static bool is_hex(const std::string& s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](unsigned char c) {
    return std::isxdigit(c);
  });
}

bool is_branch_mnemonic(const std::string& m) {
  if (m == "jmp" || m == "loop" || m == "loope" || m == "loopne") return true;
  return m.size() >= 2 && m.size() <= 4 && m[0] == 'j';
}

bool is_terminator_mnemonic(const std::string& m) {
  return is_branch_mnemonic(m) || m == "ret" || m == "retn" || m == "retf";
}

AsmListing parse_asm(const std::string& text) {
  AsmListing listing;
  std::istringstream in(text);
  std::string raw;
  while (std::getline(in, raw)) {
    std::string line = raw;
    if (auto semi = line.find(';'); semi != std::string::npos) line.resize(semi);
    // trim
    auto b = line.find_first_not_of(" \t\r");
    auto e = line.find_last_not_of(" \t\r");
    if (b == std::string::npos) {
      if (raw.find_first_not_of(" \t\r") != std::string::npos)
        listing.lines.push_back({});  // comment-only line
      continue;
    }
    line = line.substr(b, e - b + 1);

    AsmLine out;
    auto colon = line.find(':');
    bool parsed = false;
    if (colon != std::string::npos && colon > 0) {
      std::string seg = line.substr(0, colon);
      std::string rest = line.substr(colon + 1);
      auto ws = rest.find_first_of(" \t");
      std::string addr = ws == std::string::npos ? rest : rest.substr(0, ws);
      if (seg.find_first_of(" \t") == std::string::npos && is_hex(addr)) {
        out.segment = seg;
        out.address = std::stoull(addr, nullptr, 16);
        if (ws != std::string::npos) {
          std::string tail = rest.substr(ws);
          auto mb = tail.find_first_not_of(" \t");
          if (mb != std::string::npos) {
            auto me = tail.find_first_of(" \t", mb);
            out.mnemonic = lower(me == std::string::npos ? tail.substr(mb)
                                                         : tail.substr(mb, me - mb));
            if (me != std::string::npos) {
              auto ob = tail.find_first_not_of(" \t", me);
              if (ob != std::string::npos) out.operands = tail.substr(ob);
            }
          }
        }
        parsed = true;
      }
    }
    if (!parsed) out.segment = line;  // directive or garbage, preserved verbatim
    listing.lines.push_back(std::move(out));
  }
  return listing;
}

// Direct target forms: loc_XXXX, sub_XXXX, 0xXXXX, XXXXh, bare hex.
static std::optional<std::uint64_t> parse_target(const std::string& operands) {
  std::istringstream in(operands);
  std::string tok;
  while (in >> tok) {
    while (!tok.empty() && tok.back() == ',') tok.pop_back();
    std::string t = lower(tok);
    if (t == "short" || t == "near" || t == "far" || t == "ptr") continue;
    if (t.rfind("loc_", 0) == 0 || t.rfind("sub_", 0) == 0) t = t.substr(4);
    else if (t.rfind("0x", 0) == 0) t = t.substr(2);
    else if (t.size() > 1 && t.back() == 'h') t.pop_back();
    if (is_hex(t)) return std::stoull(t, nullptr, 16);
  }
  return std::nullopt;
}

struct TextInstr {
  std::string mnemonic;
  std::string operands;
  std::optional<std::uint64_t> address;
};

static std::vector<TextInstr> text_instructions(const AsmListing& listing) {
  std::vector<TextInstr> out;
  for (const auto& line : listing.lines) {
    if (!line.mnemonic || line.mnemonic->empty()) continue;
    if (lower(line.segment) != ".text") continue;
    out.push_back({*line.mnemonic, line.operands, line.address});
  }
  return out;
}

ControlFlowGraph build_cfg(const AsmListing& listing) {
  auto instrs = text_instructions(listing);
  ControlFlowGraph cfg;
  for (const auto& ins : instrs) cfg.opcodes.push_back(ins.mnemonic);
  if (instrs.empty()) return cfg;

  std::map<std::uint64_t, std::size_t> addr_to_index;
  for (std::size_t i = 0; i < instrs.size(); ++i)
    if (instrs[i].address) addr_to_index.emplace(*instrs[i].address, i);

  std::vector<bool> leader(instrs.size(), false);
  leader[0] = true;
  for (std::size_t i = 0; i < instrs.size(); ++i) {
    const auto& m = instrs[i].mnemonic;
    if (is_terminator_mnemonic(m) && i + 1 < instrs.size()) leader[i + 1] = true;
    if (is_branch_mnemonic(m) || m == "call") {
      if (auto target = parse_target(instrs[i].operands)) {
        auto it = addr_to_index.find(*target);
        if (it != addr_to_index.end()) {
          leader[it->second] = true;
          // resolved calls end their block so traversal descends into the
          // callee before the caller's continuation
          if (m == "call" && i + 1 < instrs.size()) leader[i + 1] = true;
        }
      }
    }
  }

  std::vector<std::size_t> block_of(instrs.size());
  for (std::size_t i = 0; i < instrs.size(); ++i) {
    if (leader[i]) cfg.blocks.push_back({i, i});
    cfg.blocks.back().end = i + 1;
    block_of[i] = cfg.blocks.size() - 1;
  }

  auto target_block = [&](std::size_t i) -> std::optional<std::size_t> {
    if (auto target = parse_target(instrs[i].operands)) {
      auto it = addr_to_index.find(*target);
      if (it != addr_to_index.end()) return block_of[it->second];
    }
    return std::nullopt;
  };

  for (std::size_t b = 0; b < cfg.blocks.size(); ++b) {
    const auto& blk = cfg.blocks[b];
    for (std::size_t i = blk.begin; i < blk.end; ++i)
      if (instrs[i].mnemonic == "call")
        if (auto t = target_block(i)) cfg.edges.push_back({b, *t, EdgeKind::call});

    std::size_t last = blk.end - 1;
    const auto& m = instrs[last].mnemonic;
    if (is_branch_mnemonic(m)) {
      if (auto t = target_block(last)) cfg.edges.push_back({b, *t, EdgeKind::branch});
      bool unconditional = (m == "jmp");
      if (!unconditional && b + 1 < cfg.blocks.size())
        cfg.edges.push_back({b, b + 1, EdgeKind::fallthrough});
    } else if (m == "ret" || m == "retn" || m == "retf") {
      // no successors
    } else if (b + 1 < cfg.blocks.size()) {
      cfg.edges.push_back({b, b + 1, EdgeKind::fallthrough});
    }
  }
  return cfg;
}

OpcodeSequence extract_opcodes(const AsmListing& listing, ExtractOrder order,
                               const std::string& sample_id) {
  OpcodeSequence seq;
  seq.sample_id = sample_id;
  if (order == ExtractOrder::linear) {
    for (const auto& ins : text_instructions(listing)) seq.mnemonics.push_back(ins.mnemonic);
    return seq;
  }

  auto cfg = build_cfg(listing);
  if (cfg.blocks.empty()) return seq;

  // Child priority: branch targets, then calls, then fallthrough; ties by
  // block start index (address order).
  auto rank = [](EdgeKind k) {
    switch (k) {
      case EdgeKind::branch: return 0;
      case EdgeKind::call: return 1;
      case EdgeKind::fallthrough: return 2;
    }
    return 3;
  };
  std::vector<std::vector<CfgEdge>> out_edges(cfg.blocks.size());
  for (const auto& e : cfg.edges) out_edges[e.from].push_back(e);
  for (auto& v : out_edges)
    std::sort(v.begin(), v.end(), [&](const CfgEdge& a, const CfgEdge& b) {
      if (rank(a.kind) != rank(b.kind)) return rank(a.kind) < rank(b.kind);
      return cfg.blocks[a.to].begin < cfg.blocks[b.to].begin;
    });

  std::vector<bool> visited(cfg.blocks.size(), false);
  std::vector<std::size_t> stack{0};
  while (!stack.empty()) {
    std::size_t b = stack.back();
    stack.pop_back();
    if (visited[b]) continue;
    visited[b] = true;
    for (std::size_t i = cfg.blocks[b].begin; i < cfg.blocks[b].end; ++i)
      seq.mnemonics.push_back(cfg.opcodes[i]);
    for (auto it = out_edges[b].rbegin(); it != out_edges[b].rend(); ++it)
      if (!visited[it->to]) stack.push_back(it->to);
  }
  return seq;
}

}  // namespace malfuse::disasm
