#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace malfuse::disasm {

struct AsmLine {
  std::string segment;
  std::optional<std::string> mnemonic;  // absent for comments/directives
  std::string operands;
  std::optional<std::uint64_t> address;
};

struct AsmListing {
  std::vector<AsmLine> lines;
};

struct OpcodeSequence {
  std::string sample_id;
  std::vector<std::string> mnemonics;  // lowercase, non-empty
};

enum class EdgeKind { fallthrough, branch, call };

struct CfgBlock {
  std::size_t begin = 0;  // index into the linear .text instruction list
  std::size_t end = 0;    // one past the last instruction
};

struct CfgEdge {
  std::size_t from = 0;
  std::size_t to = 0;
  EdgeKind kind = EdgeKind::fallthrough;
};

struct ControlFlowGraph {
  std::vector<CfgBlock> blocks;
  std::vector<CfgEdge> edges;
  std::vector<std::string> opcodes;  // linear .text mnemonics the blocks slice
};

enum class ExtractOrder { linear, cfg_dfs };

// Parses lines of form `<segment>:<hexaddr><ws><mnemonic>[<ws><operands>] [; comment]`.
// Lines not matching the grammar become non-instruction lines.
AsmListing parse_asm(const std::string& text);

// Splits the .text instruction stream into basic blocks at branch
// instructions and branch-target addresses, resolving direct targets.
ControlFlowGraph build_cfg(const AsmListing& listing);

OpcodeSequence extract_opcodes(const AsmListing& listing, ExtractOrder order,
                               const std::string& sample_id = {});

bool is_branch_mnemonic(const std::string& m);   // jmp/jcc/loop
bool is_terminator_mnemonic(const std::string& m);  // branch or ret

}  // namespace malfuse::disasm
