#include "hirisk/taxonomy.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace hirisk {

const char* to_string(CodeSystemId system) {
  switch (system) {
    case CodeSystemId::ICD: return "ICD";
    case CodeSystemId::ATC: return "ATC";
    case CodeSystemId::OPS: return "OPS";
  }
  return "?";
}

std::optional<CodeSystemId> parse_code_system(std::string_view text) {
  if (text == "ICD") return CodeSystemId::ICD;
  if (text == "ATC") return CodeSystemId::ATC;
  if (text == "OPS") return CodeSystemId::OPS;
  return std::nullopt;
}

int root_level(CodeSystemId system) { return system == CodeSystemId::OPS ? 2 : 1; }

std::string Taxonomy::key(CodeSystemId system, std::string_view code) {
  std::string k = to_string(system);
  k.push_back('\t');
  k.append(code);
  return k;
}

void Taxonomy::add_node(CodeNode node) {
  auto [it, inserted] = index_.emplace(key(node.system, node.code),
                                       static_cast<std::uint32_t>(nodes_.size()));
  if (!inserted)
    fail(std::string("duplicate code (") + to_string(node.system) + ", " + node.code + ")");
  nodes_.push_back(std::move(node));
}

namespace {

std::string line_tag(const std::vector<std::size_t>* lines, std::size_t i) {
  if (lines == nullptr || i >= lines->size()) return "";
  return " (line " + std::to_string((*lines)[i]) + ")";
}

}  // namespace

void Taxonomy::validate(const std::vector<std::size_t>* lines) const {
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const CodeNode& node = nodes_[i];
    int root = root_level(node.system);
    std::string where = std::string(to_string(node.system)) + " " + node.code + line_tag(lines, i);
    if (node.level < root || node.level > kMaxLevel)
      fail("level " + std::to_string(node.level) + " out of range [" + std::to_string(root) +
           "," + std::to_string(kMaxLevel) + "] for " + where);
    if (node.system == CodeSystemId::OPS) {
      char chapter = node.code.empty() ? '\0' : node.code[0];
      if (chapter != '5' && chapter != '6' && chapter != '8')
        fail("OPS node outside chapters 5/6/8: " + where);
    }
    if (node.level == root) {
      if (!node.parent.empty()) fail("root-level node must not have a parent: " + where);
      continue;
    }
    if (node.parent.empty()) fail("non-root node is missing its parent: " + where);
    const CodeNode* parent = find(node.system, node.parent);
    if (parent == nullptr)
      fail("dangling parent '" + node.parent + "' for " + where);
    if (parent->level != node.level - 1)
      fail("level gap: parent '" + node.parent + "' has level " + std::to_string(parent->level) +
           ", expected " + std::to_string(node.level - 1) + " for " + where);
  }
}

void Taxonomy::finalize() {
  children_.assign(nodes_.size(), {});
  for (std::uint32_t i = 0; i < nodes_.size(); ++i) {
    const CodeNode& node = nodes_[i];
    if (node.parent.empty()) continue;
    auto it = index_.find(key(node.system, node.parent));
    if (it != index_.end()) children_[it->second].push_back(i);
  }
}

const CodeNode* Taxonomy::find(CodeSystemId system, std::string_view code) const {
  auto it = index_.find(key(system, code));
  return it == index_.end() ? nullptr : &nodes_[it->second];
}

const CodeNode& Taxonomy::at(CodeSystemId system, std::string_view code) const {
  const CodeNode* node = find(system, code);
  if (node == nullptr)
    fail(std::string("unknown code (") + to_string(system) + ", " + std::string(code) + ")");
  return *node;
}

std::vector<const CodeNode*> Taxonomy::ancestors(CodeSystemId system,
                                                 std::string_view code) const {
  const CodeNode* node = &at(system, code);
  std::vector<const CodeNode*> chain;
  chain.reserve(static_cast<std::size_t>(node->level - root_level(system) + 1));
  while (true) {
    chain.push_back(node);
    if (node->parent.empty()) break;
    node = &at(system, node->parent);
  }
  std::reverse(chain.begin(), chain.end());
  return chain;
}

std::vector<const CodeNode*> Taxonomy::children(CodeSystemId system,
                                                std::string_view code) const {
  auto it = index_.find(key(system, code));
  if (it == index_.end())
    fail(std::string("unknown code (") + to_string(system) + ", " + std::string(code) + ")");
  std::vector<const CodeNode*> out;
  if (it->second < children_.size()) {
    out.reserve(children_[it->second].size());
    for (std::uint32_t c : children_[it->second]) out.push_back(&nodes_[c]);
  }
  return out;
}

std::map<std::pair<CodeSystemId, int>, std::size_t> Taxonomy::level_counts() const {
  std::map<std::pair<CodeSystemId, int>, std::size_t> counts;
  for (const CodeNode& node : nodes_) ++counts[{node.system, node.level}];
  return counts;
}

Taxonomy parse_taxonomy(std::istream& in, const std::string& source_name) {
  Taxonomy taxonomy;
  std::vector<std::size_t> lines;
  std::string line;
  std::size_t line_no = 0;
  bool saw_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!saw_header) {
      if (line != "system\tcode\tlevel\tparent\tname")
        fail(source_name + ":1: expected header 'system\\tcode\\tlevel\\tparent\\tname'");
      saw_header = true;
      continue;
    }
    if (line.empty()) continue;
    std::vector<std::string> fields = split(line, '\t');
    std::string where = source_name + ":" + std::to_string(line_no);
    if (fields.size() != 5)
      fail(where + ": expected 5 tab-separated fields, got " + std::to_string(fields.size()));
    auto system = parse_code_system(fields[0]);
    if (!system) fail(where + ": unknown code system '" + fields[0] + "'");
    CodeNode node;
    node.system = *system;
    node.code = fields[1];
    if (node.code.empty()) fail(where + ": empty code");
    node.level = static_cast<int>(parse_int(fields[2], where + " level"));
    node.parent = fields[3];
    node.name = fields[4];
    try {
      taxonomy.add_node(std::move(node));
    } catch (const Error& e) {
      fail(where + ": " + e.what());
    }
    lines.push_back(line_no);
  }
  taxonomy.validate(&lines);
  taxonomy.finalize();
  return taxonomy;
}

Taxonomy load_taxonomy(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open taxonomy file: " + path.string());
  return parse_taxonomy(in, path.filename().string());
}

void write_taxonomy_tsv(const Taxonomy& taxonomy, const std::filesystem::path& path) {
  std::vector<const CodeNode*> order;
  order.reserve(taxonomy.size());
  for (const CodeNode& node : taxonomy.nodes()) order.push_back(&node);
  std::sort(order.begin(), order.end(), [](const CodeNode* a, const CodeNode* b) {
    return std::tie(a->system, a->level, a->code) < std::tie(b->system, b->level, b->code);
  });
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot write taxonomy file: " + path.string());
  out << "system\tcode\tlevel\tparent\tname\n";
  for (const CodeNode* node : order) {
    out << to_string(node->system) << '\t' << node->code << '\t' << node->level << '\t'
        << node->parent << '\t' << node->name << '\n';
  }
  if (!out) fail("failed writing taxonomy file: " + path.string());
}

}  // namespace hirisk
