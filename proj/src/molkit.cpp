#include "mkmed/molkit.hpp"

#include <algorithm>
#include <cmath>
#include <cctype>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "mkmed/rng.hpp"

namespace mkmed {

namespace {

const std::map<std::string, double>& mass_table() {
  static const std::map<std::string, double> t = {
      {"H", 1.008},   {"B", 10.81},   {"C", 12.011}, {"N", 14.007},
      {"O", 15.999},  {"P", 30.974},  {"S", 32.06},  {"F", 18.998},
      {"Cl", 35.45},  {"Br", 79.904}, {"I", 126.904}};
  return t;
}

int element_class(const std::string& sym) {
  static const std::map<std::string, int> t = {
      {"B", 0}, {"C", 1}, {"N", 2}, {"O", 3},  {"P", 4},
      {"S", 5}, {"F", 6}, {"Cl", 7}, {"Br", 8}, {"I", 9}};
  auto it = t.find(sym);
  return it == t.end() ? -1 : it->second;
}

double order_value(BondOrder o) {
  switch (o) {
    case BondOrder::Single: return 1.0;
    case BondOrder::Double: return 2.0;
    case BondOrder::Triple: return 3.0;
    case BondOrder::Aromatic: return 1.5;
  }
  return 1.0;
}

// Smallest standard valence that accommodates the bond-order sum; leftover
// capacity becomes implicit hydrogens. Neutral atoms only (charged atoms are
// written in brackets, where H is explicit).
int default_h(const std::string& sym, double bond_sum) {
  static const std::map<std::string, std::vector<int>> valences = {
      {"B", {3}}, {"C", {4}}, {"N", {3}},       {"O", {2}},  {"P", {3, 5}},
      {"S", {2, 4, 6}}, {"F", {1}}, {"Cl", {1}}, {"Br", {1}}, {"I", {1}}};
  auto it = valences.find(sym);
  if (it == valences.end()) return 0;
  int need = static_cast<int>(std::ceil(bond_sum - 1e-9));
  for (int v : it->second)
    if (v >= need) return v - need;
  return 0;
}

double bond_order_sum(const MoleculeGraph& g, int atom) {
  double s = 0.0;
  for (const BondRecord& b : g.bonds)
    if (b.a == atom || b.b == atom) s += order_value(b.order);
  return s;
}

std::vector<std::vector<std::pair<int, int>>> adjacency(const MoleculeGraph& g) {
  std::vector<std::vector<std::pair<int, int>>> adj(static_cast<size_t>(g.n_atoms()));
  for (int e = 0; e < g.n_bonds(); ++e) {
    adj[static_cast<size_t>(g.bonds[e].a)].push_back({g.bonds[e].b, e});
    adj[static_cast<size_t>(g.bonds[e].b)].push_back({g.bonds[e].a, e});
  }
  return adj;
}

// A bond lies in a ring iff it is not a bridge.
std::vector<char> ring_bond_flags(const MoleculeGraph& g) {
  int n = g.n_atoms();
  auto adj = adjacency(g);
  std::vector<char> in_ring(static_cast<size_t>(g.n_bonds()), 1);
  std::vector<int> disc(static_cast<size_t>(n), -1), low(static_cast<size_t>(n), 0);
  int timer = 0;

  struct Frame {
    int u;
    int parent_edge;
    size_t next;
  };
  for (int root = 0; root < n; ++root) {
    if (disc[static_cast<size_t>(root)] != -1) continue;
    std::vector<Frame> stack{{root, -1, 0}};
    disc[static_cast<size_t>(root)] = low[static_cast<size_t>(root)] = timer++;
    while (!stack.empty()) {
      Frame& f = stack.back();
      if (f.next < adj[static_cast<size_t>(f.u)].size()) {
        auto [v, e] = adj[static_cast<size_t>(f.u)][f.next++];
        if (e == f.parent_edge) continue;
        if (disc[static_cast<size_t>(v)] == -1) {
          disc[static_cast<size_t>(v)] = low[static_cast<size_t>(v)] = timer++;
          stack.push_back({v, e, 0});
        } else {
          low[static_cast<size_t>(f.u)] =
              std::min(low[static_cast<size_t>(f.u)], disc[static_cast<size_t>(v)]);
        }
      } else {
        int u = f.u, pe = f.parent_edge;
        stack.pop_back();
        if (!stack.empty()) {
          int p = stack.back().u;
          low[static_cast<size_t>(p)] =
              std::min(low[static_cast<size_t>(p)], low[static_cast<size_t>(u)]);
          if (low[static_cast<size_t>(u)] > disc[static_cast<size_t>(p)])
            in_ring[static_cast<size_t>(pe)] = 0;  // bridge
        }
      }
    }
  }
  return in_ring;
}

bool has_other_multiple_bond(const MoleculeGraph& g, int atom, int excluding_edge) {
  for (int e = 0; e < g.n_bonds(); ++e) {
    if (e == excluding_edge) continue;
    const BondRecord& b = g.bonds[e];
    if (b.a != atom && b.b != atom) continue;
    if (b.order != BondOrder::Single) return true;
  }
  return false;
}

struct AtomToken {
  AtomRecord atom;
  bool bracket = false;  // explicit-H semantics
};

bool is_aromatic_symbol(char c) {
  return c == 'b' || c == 'c' || c == 'n' || c == 'o' || c == 'p' || c == 's';
}

}  // namespace

MoleculeGraph parse_smiles(const std::string& s) {
  if (s.empty()) throw EmptyInput("parse_smiles: empty string");

  MoleculeGraph g;
  std::vector<char> from_bracket;
  std::vector<int> branch_stack;
  int prev = -1;
  int pending = -1;  // 0 single, 1 double, 2 triple, 3 aromatic
  struct RingSlot {
    int atom;
    int pending;
  };
  std::map<char, RingSlot> open_rings;

  auto bad = [&](size_t pos, const std::string& why) {
    throw UnsupportedToken("parse_smiles: " + why + " at position " +
                           std::to_string(pos));
  };

  auto order_from_pending = [](int p) {
    switch (p) {
      case 0: return BondOrder::Single;
      case 1: return BondOrder::Double;
      case 2: return BondOrder::Triple;
      default: return BondOrder::Aromatic;
    }
  };

  auto add_bond = [&](int u, int v, int pend, size_t pos) {
    if (u == v) bad(pos, "ring closure bonds an atom to itself");
    for (const BondRecord& b : g.bonds)
      if ((b.a == u && b.b == v) || (b.a == v && b.b == u))
        bad(pos, "duplicate bond");
    BondRecord b;
    b.a = u;
    b.b = v;
    if (pend >= 0)
      b.order = order_from_pending(pend);
    else
      b.order = (g.atoms[static_cast<size_t>(u)].aromatic &&
                 g.atoms[static_cast<size_t>(v)].aromatic)
                    ? BondOrder::Aromatic
                    : BondOrder::Single;
    g.bonds.push_back(b);
  };

  size_t i = 0;
  const size_t n = s.size();
  while (i < n) {
    char c = s[i];
    AtomToken tok;
    bool is_atom = false;

    if (c == '[') {
      size_t start = i;
      ++i;
      if (i >= n) bad(start, "unterminated bracket atom");
      if (std::isdigit(static_cast<unsigned char>(s[i])))
        bad(i, "isotope specification unsupported");
      // element symbol
      if (s[i] == 'C' && i + 1 < n && s[i + 1] == 'l') {
        tok.atom.element = "Cl";
        i += 2;
      } else if (s[i] == 'B' && i + 1 < n && s[i + 1] == 'r') {
        tok.atom.element = "Br";
        i += 2;
      } else if (is_aromatic_symbol(s[i])) {
        tok.atom.element = std::string(1, static_cast<char>(std::toupper(
                                              static_cast<unsigned char>(s[i]))));
        tok.atom.aromatic = true;
        ++i;
      } else if (std::string("BCNOPSFI").find(s[i]) != std::string::npos) {
        tok.atom.element = std::string(1, s[i]);
        ++i;
      } else {
        bad(i, std::string("unsupported bracket element '") + s[i] + "'");
      }
      // explicit hydrogen count (default 0 when absent)
      if (i < n && s[i] == 'H') {
        ++i;
        int h = 1;
        if (i < n && std::isdigit(static_cast<unsigned char>(s[i]))) {
          h = s[i] - '0';
          ++i;
        }
        tok.atom.implicit_h = h;
      }
      // charge
      if (i < n && (s[i] == '+' || s[i] == '-')) {
        char sign = s[i];
        int mag = 1;
        ++i;
        if (i < n && std::isdigit(static_cast<unsigned char>(s[i]))) {
          mag = s[i] - '0';
          ++i;
        } else {
          while (i < n && s[i] == sign) {
            ++mag;
            ++i;
          }
        }
        tok.atom.charge = (sign == '+') ? mag : -mag;
      }
      if (i >= n || s[i] != ']') bad(i, "expected ']'");
      ++i;
      tok.bracket = true;
      is_atom = true;
    } else if (c == 'C' && i + 1 < n && s[i + 1] == 'l') {
      tok.atom.element = "Cl";
      i += 2;
      is_atom = true;
    } else if (c == 'B' && i + 1 < n && s[i + 1] == 'r') {
      tok.atom.element = "Br";
      i += 2;
      is_atom = true;
    } else if (std::string("BCNOPSFI").find(c) != std::string::npos) {
      tok.atom.element = std::string(1, c);
      ++i;
      is_atom = true;
    } else if (is_aromatic_symbol(c)) {
      tok.atom.element =
          std::string(1, static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
      tok.atom.aromatic = true;
      ++i;
      is_atom = true;
    } else if (std::isdigit(static_cast<unsigned char>(c))) {
      if (prev < 0) bad(i, "ring digit before any atom");
      auto it = open_rings.find(c);
      if (it != open_rings.end()) {
        int p = pending >= 0 ? pending : it->second.pending;
        add_bond(it->second.atom, prev, p, i);
        open_rings.erase(it);
      } else {
        open_rings[c] = {prev, pending};
      }
      pending = -1;
      ++i;
      continue;
    } else if (c == '(') {
      if (prev < 0) throw UnbalancedBranch("parse_smiles: branch before any atom");
      if (pending >= 0) bad(i, "bond symbol before branch open");
      branch_stack.push_back(prev);
      ++i;
      continue;
    } else if (c == ')') {
      if (branch_stack.empty())
        throw UnbalancedBranch("parse_smiles: unmatched ')' at position " +
                               std::to_string(i));
      if (pending >= 0) bad(i, "dangling bond before branch close");
      prev = branch_stack.back();
      branch_stack.pop_back();
      ++i;
      continue;
    } else if (c == '-' || c == '=' || c == '#' || c == ':') {
      if (pending >= 0) bad(i, "two consecutive bond symbols");
      pending = (c == '-') ? 0 : (c == '=') ? 1 : (c == '#') ? 2 : 3;
      ++i;
      continue;
    } else if (c == '.') {
      bad(i, "disconnected components ('.') unsupported");
    } else if (c == '%') {
      bad(i, "multi-digit ring closures unsupported");
    } else if (c == '@' || c == '/' || c == '\\') {
      bad(i, "stereochemistry tokens unsupported");
    } else {
      bad(i, std::string("unrecognized character '") + c + "'");
    }

    if (is_atom) {
      g.atoms.push_back(tok.atom);
      from_bracket.push_back(tok.bracket ? 1 : 0);
      int idx = g.n_atoms() - 1;
      if (prev >= 0) add_bond(prev, idx, pending, i);
      pending = -1;
      prev = idx;
    }
  }

  if (!open_rings.empty())
    throw UnbalancedRing("parse_smiles: " + std::to_string(open_rings.size()) +
                         " unclosed ring digit(s)");
  if (!branch_stack.empty())
    throw UnbalancedBranch("parse_smiles: " + std::to_string(branch_stack.size()) +
                           " unclosed '('");
  if (pending >= 0)
    throw UnsupportedToken("parse_smiles: dangling bond at end of input");
  if (g.atoms.empty()) throw EmptyInput("parse_smiles: no atoms");

  // ring membership
  std::vector<char> ring_bonds = ring_bond_flags(g);
  for (int e = 0; e < g.n_bonds(); ++e) {
    if (!ring_bonds[static_cast<size_t>(e)]) continue;
    g.atoms[static_cast<size_t>(g.bonds[e].a)].in_ring = true;
    g.atoms[static_cast<size_t>(g.bonds[e].b)].in_ring = true;
  }

  // implicit hydrogens for bare atoms
  for (int a = 0; a < g.n_atoms(); ++a) {
    if (from_bracket[static_cast<size_t>(a)]) continue;
    g.atoms[static_cast<size_t>(a)].implicit_h =
        default_h(g.atoms[static_cast<size_t>(a)].element, bond_order_sum(g, a));
  }

  // conjugation: aromatic bonds, plus bonds whose both endpoints carry another
  // multiple bond (the classic alternating pattern)
  for (int e = 0; e < g.n_bonds(); ++e) {
    BondRecord& b = g.bonds[static_cast<size_t>(e)];
    if (b.order == BondOrder::Aromatic) {
      b.conjugated = true;
    } else {
      b.conjugated = has_other_multiple_bond(g, b.a, e) &&
                     has_other_multiple_bond(g, b.b, e);
    }
  }

  g.canonical_id = wl_id(g);
  return g;
}

std::string wl_id(const MoleculeGraph& g) {
  int n = g.n_atoms();
  if (n == 0) return "empty";
  auto adj = adjacency(g);
  std::vector<std::uint64_t> label(static_cast<size_t>(n));
  for (int a = 0; a < n; ++a) {
    const AtomRecord& at = g.atoms[static_cast<size_t>(a)];
    std::string init = at.element + "|" + std::to_string(at.charge) + "|" +
                       (at.aromatic ? "1" : "0") + "|" +
                       std::to_string(at.implicit_h) + "|" +
                       (at.in_ring ? "1" : "0");
    label[static_cast<size_t>(a)] = fnv1a(init);
  }
  auto mix = [](std::uint64_t a, std::uint64_t b) {
    a ^= b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2);
    a *= 0xff51afd7ed558ccdULL;
    a ^= a >> 33;
    return a;
  };
  for (int round = 0; round < 3; ++round) {
    std::vector<std::uint64_t> next(static_cast<size_t>(n));
    for (int a = 0; a < n; ++a) {
      std::vector<std::uint64_t> nb;
      for (auto [v, e] : adj[static_cast<size_t>(a)]) {
        std::uint64_t code =
            static_cast<std::uint64_t>(g.bonds[static_cast<size_t>(e)].order);
        nb.push_back(mix(code * 0x100000001b3ULL, label[static_cast<size_t>(v)]));
      }
      std::sort(nb.begin(), nb.end());
      std::uint64_t h = label[static_cast<size_t>(a)];
      for (std::uint64_t q : nb) h = mix(h, q);
      next[static_cast<size_t>(a)] = h;
    }
    label = std::move(next);
  }
  std::sort(label.begin(), label.end());
  std::uint64_t h = fnv1a("wl") ^ (static_cast<std::uint64_t>(n) << 32) ^
                    static_cast<std::uint64_t>(g.n_bonds());
  for (std::uint64_t q : label) h = mix(h, q);
  std::ostringstream os;
  os << std::hex << h;
  return os.str();
}

std::string unparse(const MoleculeGraph& g) {
  if (g.atoms.empty()) throw EmptyInput("unparse: empty graph");
  int n = g.n_atoms();
  auto adj = adjacency(g);

  auto bond_symbol = [&](const BondRecord& b) -> std::string {
    bool both_arom = g.atoms[static_cast<size_t>(b.a)].aromatic &&
                     g.atoms[static_cast<size_t>(b.b)].aromatic;
    switch (b.order) {
      case BondOrder::Single: return both_arom ? "-" : "";
      case BondOrder::Double: return "=";
      case BondOrder::Triple: return "#";
      case BondOrder::Aromatic: return both_arom ? "" : ":";
    }
    return "";
  };

  auto atom_token = [&](int a) -> std::string {
    const AtomRecord& at = g.atoms[static_cast<size_t>(a)];
    std::string sym = at.element;
    if (at.aromatic)
      for (char& ch : sym) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    bool bare_ok = at.charge == 0 &&
                   at.implicit_h == default_h(at.element, bond_order_sum(g, a));
    if (bare_ok) return sym;
    std::string t = "[" + sym;
    if (at.implicit_h > 0) {
      t += "H";
      if (at.implicit_h > 1) t += std::to_string(at.implicit_h);
    }
    if (at.charge > 0) t += (at.charge == 1) ? "+" : "+" + std::to_string(at.charge);
    if (at.charge < 0) t += (at.charge == -1) ? "-" : "-" + std::to_string(-at.charge);
    return t + "]";
  };

  // pass 1: spanning tree + ring-closure digits in traversal order
  std::vector<char> visited(static_cast<size_t>(n), 0);
  std::vector<char> edge_seen(static_cast<size_t>(g.n_bonds()), 0);
  std::vector<std::vector<std::pair<int, int>>> tree_children(static_cast<size_t>(n));
  std::vector<std::vector<std::pair<int, int>>> ring_marks(static_cast<size_t>(n));
  int next_digit = 1;

  std::function<void(int)> explore = [&](int u) {
    visited[static_cast<size_t>(u)] = 1;
    for (auto [v, e] : adj[static_cast<size_t>(u)]) {
      if (edge_seen[static_cast<size_t>(e)]) continue;
      edge_seen[static_cast<size_t>(e)] = 1;
      if (!visited[static_cast<size_t>(v)]) {
        tree_children[static_cast<size_t>(u)].push_back({v, e});
        explore(v);
      } else {
        if (next_digit > 9)
          throw UnsupportedToken("unparse: more than 9 ring closures");
        ring_marks[static_cast<size_t>(u)].push_back({next_digit, e});
        ring_marks[static_cast<size_t>(v)].push_back({next_digit, e});
        ++next_digit;
      }
    }
  };
  explore(0);
  for (int a = 0; a < n; ++a)
    if (!visited[static_cast<size_t>(a)])
      throw UnsupportedToken("unparse: graph is disconnected");

  std::string out;
  std::function<void(int)> emit = [&](int u) {
    out += atom_token(u);
    for (auto [digit, e] : ring_marks[static_cast<size_t>(u)]) {
      out += bond_symbol(g.bonds[static_cast<size_t>(e)]);
      out += static_cast<char>('0' + digit);
    }
    const auto& kids = tree_children[static_cast<size_t>(u)];
    for (size_t k = 0; k < kids.size(); ++k) {
      auto [v, e] = kids[k];
      std::string bs = bond_symbol(g.bonds[static_cast<size_t>(e)]);
      if (k + 1 < kids.size()) {
        out += "(" + bs;
        emit(v);
        out += ")";
      } else {
        out += bs;
        emit(v);
      }
    }
  };
  emit(0);
  return out;
}

Mat node_features(const MoleculeGraph& g) {
  int n = g.n_atoms();
  Mat f = Mat::Zero(n, 9);
  std::vector<int> degree(static_cast<size_t>(n), 0);
  std::vector<int> n_double(static_cast<size_t>(n), 0), n_triple(static_cast<size_t>(n), 0),
      n_arom(static_cast<size_t>(n), 0);
  for (const BondRecord& b : g.bonds) {
    degree[static_cast<size_t>(b.a)]++;
    degree[static_cast<size_t>(b.b)]++;
    if (b.order == BondOrder::Double) {
      n_double[static_cast<size_t>(b.a)]++;
      n_double[static_cast<size_t>(b.b)]++;
    } else if (b.order == BondOrder::Triple) {
      n_triple[static_cast<size_t>(b.a)]++;
      n_triple[static_cast<size_t>(b.b)]++;
    } else if (b.order == BondOrder::Aromatic) {
      n_arom[static_cast<size_t>(b.a)]++;
      n_arom[static_cast<size_t>(b.b)]++;
    }
  }
  for (int a = 0; a < n; ++a) {
    const AtomRecord& at = g.atoms[static_cast<size_t>(a)];
    int hyb = 0;  // sp3
    if (n_triple[static_cast<size_t>(a)] > 0 || n_double[static_cast<size_t>(a)] >= 2)
      hyb = 2;  // sp
    else if (n_double[static_cast<size_t>(a)] > 0 || n_arom[static_cast<size_t>(a)] > 0 ||
             at.aromatic)
      hyb = 1;  // sp2
    f(a, 0) = element_class(at.element);
    f(a, 1) = degree[static_cast<size_t>(a)];
    f(a, 2) = at.charge;
    f(a, 3) = 0.0;  // chirality channel reserved by the grammar subset
    f(a, 4) = at.implicit_h;
    f(a, 5) = hyb;
    f(a, 6) = at.aromatic ? 1.0 : 0.0;
    f(a, 7) = at.in_ring ? 1.0 : 0.0;
    f(a, 8) = mass_table().at(at.element) / 100.0;
  }
  return f;
}

Mat edge_features(const MoleculeGraph& g) {
  Mat f = Mat::Zero(g.n_bonds(), 8);
  for (int e = 0; e < g.n_bonds(); ++e) {
    const BondRecord& b = g.bonds[static_cast<size_t>(e)];
    switch (b.order) {
      case BondOrder::Single: f(e, 0) = 1.0; break;
      case BondOrder::Double: f(e, 1) = 1.0; break;
      case BondOrder::Triple: f(e, 2) = 1.0; break;
      case BondOrder::Aromatic: f(e, 3) = 1.0; break;
    }
    switch (b.stereo) {
      case Stereo::None: f(e, 4) = 1.0; break;
      case Stereo::Cis: f(e, 5) = 1.0; break;
      case Stereo::Trans: f(e, 6) = 1.0; break;
    }
    f(e, 7) = b.conjugated ? 1.0 : 0.0;
  }
  return f;
}

std::vector<Substructure> decompose(const MoleculeGraph& g) {
  int n = g.n_atoms();
  std::vector<char> ring_bonds = ring_bond_flags(g);
  std::vector<char> cut(static_cast<size_t>(g.n_bonds()), 0);
  for (int e = 0; e < g.n_bonds(); ++e) {
    const BondRecord& b = g.bonds[static_cast<size_t>(e)];
    if (ring_bonds[static_cast<size_t>(e)]) continue;
    if (b.order != BondOrder::Single) continue;
    bool ring_boundary = g.atoms[static_cast<size_t>(b.a)].in_ring !=
                         g.atoms[static_cast<size_t>(b.b)].in_ring;
    bool unsat_boundary = false;
    for (int e2 = 0; e2 < g.n_bonds() && !unsat_boundary; ++e2) {
      if (e2 == e) continue;
      const BondRecord& b2 = g.bonds[static_cast<size_t>(e2)];
      if (b2.order != BondOrder::Double && b2.order != BondOrder::Triple) continue;
      if (b2.a == b.a || b2.b == b.a || b2.a == b.b || b2.b == b.b)
        unsat_boundary = true;
    }
    if (ring_boundary || unsat_boundary) cut[static_cast<size_t>(e)] = 1;
  }

  // components over uncut bonds
  std::vector<int> comp(static_cast<size_t>(n), -1);
  auto adj = adjacency(g);
  int n_comp = 0;
  for (int a = 0; a < n; ++a) {
    if (comp[static_cast<size_t>(a)] != -1) continue;
    std::vector<int> queue{a};
    comp[static_cast<size_t>(a)] = n_comp;
    while (!queue.empty()) {
      int u = queue.back();
      queue.pop_back();
      for (auto [v, e] : adj[static_cast<size_t>(u)]) {
        if (cut[static_cast<size_t>(e)]) continue;
        if (comp[static_cast<size_t>(v)] == -1) {
          comp[static_cast<size_t>(v)] = n_comp;
          queue.push_back(v);
        }
      }
    }
    ++n_comp;
  }

  std::vector<Substructure> out(static_cast<size_t>(n_comp));
  std::vector<IndexVec> members(static_cast<size_t>(n_comp));
  for (int a = 0; a < n; ++a) members[static_cast<size_t>(comp[static_cast<size_t>(a)])].push_back(a);
  for (int c = 0; c < n_comp; ++c) {
    Substructure& sub = out[static_cast<size_t>(c)];
    sub.atom_indices = members[static_cast<size_t>(c)];
    std::map<int, int> local;
    for (size_t k = 0; k < sub.atom_indices.size(); ++k) {
      local[sub.atom_indices[k]] = static_cast<int>(k);
      sub.graph.atoms.push_back(g.atoms[static_cast<size_t>(sub.atom_indices[k])]);
    }
    for (int e = 0; e < g.n_bonds(); ++e) {
      if (cut[static_cast<size_t>(e)]) continue;
      const BondRecord& b = g.bonds[static_cast<size_t>(e)];
      auto ia = local.find(b.a), ib = local.find(b.b);
      if (ia == local.end() || ib == local.end()) continue;
      BondRecord nb = b;
      nb.a = ia->second;
      nb.b = ib->second;
      sub.graph.bonds.push_back(nb);
    }
    sub.graph.canonical_id = wl_id(sub.graph);
  }
  return out;
}

namespace {

Vec3 random_unit3(Rng& rng) {
  for (;;) {
    Vec3 v(rng.normal(), rng.normal(), rng.normal());
    double l = v.norm();
    if (l > 0.1) return v / l;
  }
}

}  // namespace

Conformer generate_conformer(const MoleculeGraph& g, std::uint64_t seed) {
  int n = g.n_atoms();
  Conformer c;
  c.seed = seed;
  c.coords.assign(static_cast<size_t>(n), Vec3::Zero());
  Rng rng(derive_seed(seed, "conformer"));
  auto adj = adjacency(g);

  // breadth-first placement, root pinned at the origin
  std::vector<char> placed(static_cast<size_t>(n), 0);
  std::vector<int> queue{0};
  placed[0] = 1;
  size_t qi = 0;
  while (qi < queue.size()) {
    int u = queue[qi++];
    for (auto [v, e] : adj[static_cast<size_t>(u)]) {
      (void)e;
      if (placed[static_cast<size_t>(v)]) continue;
      Vec3 dir = random_unit3(rng);
      Vec3 jitter = random_unit3(rng) * (0.2 * rng.uniform());
      c.coords[static_cast<size_t>(v)] = c.coords[static_cast<size_t>(u)] + 1.5 * dir + jitter;
      placed[static_cast<size_t>(v)] = 1;
      queue.push_back(v);
    }
  }

  auto bonds_within = [&](double lo, double hi) {
    for (const BondRecord& b : g.bonds) {
      double d = (c.coords[static_cast<size_t>(b.a)] - c.coords[static_cast<size_t>(b.b)]).norm();
      if (d < lo || d > hi) return false;
    }
    return true;
  };

  // spring relaxation toward bond length 1.5 with short-range repulsion
  for (int step = 0; step < 200 && !bonds_within(0.85, 1.95); ++step) {
    std::vector<Vec3> force(static_cast<size_t>(n), Vec3::Zero());
    for (const BondRecord& b : g.bonds) {
      Vec3 d = c.coords[static_cast<size_t>(b.b)] - c.coords[static_cast<size_t>(b.a)];
      double l = d.norm();
      if (l < 1e-9) {
        c.coords[static_cast<size_t>(b.b)] += Vec3(1e-3, 2e-3, 3e-3);
        d = c.coords[static_cast<size_t>(b.b)] - c.coords[static_cast<size_t>(b.a)];
        l = d.norm();
      }
      Vec3 u = d / l;
      force[static_cast<size_t>(b.a)] += 0.5 * (l - 1.5) * u;
      force[static_cast<size_t>(b.b)] -= 0.5 * (l - 1.5) * u;
    }
    std::set<std::pair<int, int>> bonded;
    for (const BondRecord& b : g.bonds)
      bonded.insert({std::min(b.a, b.b), std::max(b.a, b.b)});
    for (int a = 0; a < n; ++a) {
      for (int b2 = a + 1; b2 < n; ++b2) {
        if (bonded.count({a, b2})) continue;
        Vec3 d = c.coords[static_cast<size_t>(b2)] - c.coords[static_cast<size_t>(a)];
        double l = d.norm();
        if (l >= 1.2) continue;
        Vec3 u = l < 1e-9 ? Vec3(1, 0, 0) : Vec3(d / l);
        force[static_cast<size_t>(a)] -= 0.5 * (1.2 - l) * u;
        force[static_cast<size_t>(b2)] += 0.5 * (1.2 - l) * u;
      }
    }
    for (int a = 0; a < n; ++a) c.coords[static_cast<size_t>(a)] += 0.4 * force[static_cast<size_t>(a)];
  }

  if (!bonds_within(0.8, 2.0))
    throw RelaxationFailure("generate_conformer: bond lengths out of range after 200 steps");
  return c;
}

MoleculeImage rasterize(const MoleculeGraph& g, int size, std::uint64_t seed) {
  if (size < 16) throw DimensionMismatch("rasterize: size must be >= 16");
  int n = g.n_atoms();
  Rng rng(derive_seed(seed, "raster"));
  auto adj = adjacency(g);

  // 2D layout: breadth-first placement then fixed-step relaxation
  std::vector<Eigen::Vector2d> pos(static_cast<size_t>(n), Eigen::Vector2d::Zero());
  std::vector<char> placed(static_cast<size_t>(n), 0);
  std::vector<int> queue{0};
  placed[0] = 1;
  size_t qi = 0;
  while (qi < queue.size()) {
    int u = queue[qi++];
    for (auto [v, e] : adj[static_cast<size_t>(u)]) {
      (void)e;
      if (placed[static_cast<size_t>(v)]) continue;
      double ang = rng.uniform(0.0, 2.0 * M_PI);
      double jang = rng.uniform(0.0, 2.0 * M_PI);
      double jmag = 0.2 * rng.uniform();
      pos[static_cast<size_t>(v)] =
          pos[static_cast<size_t>(u)] + 1.5 * Eigen::Vector2d(std::cos(ang), std::sin(ang)) +
          jmag * Eigen::Vector2d(std::cos(jang), std::sin(jang));
      placed[static_cast<size_t>(v)] = 1;
      queue.push_back(v);
    }
  }
  std::set<std::pair<int, int>> bonded;
  for (const BondRecord& b : g.bonds)
    bonded.insert({std::min(b.a, b.b), std::max(b.a, b.b)});
  for (int step = 0; step < 150; ++step) {
    std::vector<Eigen::Vector2d> force(static_cast<size_t>(n), Eigen::Vector2d::Zero());
    for (const BondRecord& b : g.bonds) {
      Eigen::Vector2d d = pos[static_cast<size_t>(b.b)] - pos[static_cast<size_t>(b.a)];
      double l = d.norm();
      if (l < 1e-9) {
        pos[static_cast<size_t>(b.b)] += Eigen::Vector2d(1e-3, 2e-3);
        d = pos[static_cast<size_t>(b.b)] - pos[static_cast<size_t>(b.a)];
        l = d.norm();
      }
      Eigen::Vector2d u = d / l;
      force[static_cast<size_t>(b.a)] += 0.5 * (l - 1.5) * u;
      force[static_cast<size_t>(b.b)] -= 0.5 * (l - 1.5) * u;
    }
    for (int a = 0; a < n; ++a) {
      for (int b2 = a + 1; b2 < n; ++b2) {
        if (bonded.count({a, b2})) continue;
        Eigen::Vector2d d = pos[static_cast<size_t>(b2)] - pos[static_cast<size_t>(a)];
        double l = d.norm();
        if (l >= 1.3) continue;
        Eigen::Vector2d u = l < 1e-9 ? Eigen::Vector2d(1, 0) : Eigen::Vector2d(d / l);
        force[static_cast<size_t>(a)] -= 0.5 * (1.3 - l) * u;
        force[static_cast<size_t>(b2)] += 0.5 * (1.3 - l) * u;
      }
    }
    for (int a = 0; a < n; ++a) pos[static_cast<size_t>(a)] += 0.4 * force[static_cast<size_t>(a)];
  }

  // map to pixel coordinates, uniform scale, centered
  double pad = 4.0;
  Eigen::Vector2d lo = pos[0], hi = pos[0];
  for (const auto& p : pos) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  double extent = std::max({hi.x() - lo.x(), hi.y() - lo.y(), 1e-9});
  double scale = std::min((size - 2.0 * pad) / extent, 16.0);
  Eigen::Vector2d center = 0.5 * (lo + hi);
  std::vector<Eigen::Vector2d> px(static_cast<size_t>(n));
  for (int a = 0; a < n; ++a)
    px[static_cast<size_t>(a)] =
        (pos[static_cast<size_t>(a)] - center) * scale + Eigen::Vector2d(size / 2.0, size / 2.0);

  MoleculeImage img;
  img.height = img.width = size;
  img.channels = 3;
  img.seed = seed;
  img.pixels.assign(static_cast<size_t>(size * size * 3), 0.0);

  auto splat_max = [&](int y, int x, int ch, double v) {
    if (y < 0 || y >= size || x < 0 || x >= size) return;
    double& q = img.at(y, x, ch);
    q = std::min(1.0, std::max(q, v));
  };

  // bonds: anti-aliased segments in channel 0
  for (const BondRecord& b : g.bonds) {
    Eigen::Vector2d p0 = px[static_cast<size_t>(b.a)], p1 = px[static_cast<size_t>(b.b)];
    int x0 = static_cast<int>(std::floor(std::min(p0.x(), p1.x()))) - 2;
    int x1 = static_cast<int>(std::ceil(std::max(p0.x(), p1.x()))) + 2;
    int y0 = static_cast<int>(std::floor(std::min(p0.y(), p1.y()))) - 2;
    int y1 = static_cast<int>(std::ceil(std::max(p0.y(), p1.y()))) + 2;
    Eigen::Vector2d seg = p1 - p0;
    double seg2 = std::max(seg.squaredNorm(), 1e-12);
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        Eigen::Vector2d q(x + 0.5, y + 0.5);
        double t = std::clamp((q - p0).dot(seg) / seg2, 0.0, 1.0);
        double d = (q - (p0 + t * seg)).norm();
        double v = 0.9 * std::max(0.0, 1.0 - d / 1.5);
        if (v > 0.0) splat_max(y, x, 0, v);
      }
    }
  }

  // atoms: disks in channel 1 (heteroatoms bright, carbons dim), aromatic
  // atoms echoed in channel 2
  for (int a = 0; a < n; ++a) {
    const AtomRecord& at = g.atoms[static_cast<size_t>(a)];
    double peak1 = (at.element == "C") ? 0.6 : 1.0;
    double radius = 2.2;
    Eigen::Vector2d p = px[static_cast<size_t>(a)];
    int x0 = static_cast<int>(std::floor(p.x() - radius)) - 1;
    int x1 = static_cast<int>(std::ceil(p.x() + radius)) + 1;
    int y0 = static_cast<int>(std::floor(p.y() - radius)) - 1;
    int y1 = static_cast<int>(std::ceil(p.y() + radius)) + 1;
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        double r = (Eigen::Vector2d(x + 0.5, y + 0.5) - p).norm();
        double fall = std::max(0.0, 1.0 - (r / radius) * (r / radius));
        if (fall <= 0.0) continue;
        splat_max(y, x, 1, peak1 * fall);
        if (at.aromatic) splat_max(y, x, 2, 0.9 * fall);
      }
    }
  }
  return img;
}

PropertyVector descriptors(const MoleculeGraph& g) {
  PropertyVector p;
  int total_h = 0;
  for (const AtomRecord& a : g.atoms) {
    p.mw += mass_table().at(a.element);
    total_h += a.implicit_h;
    if (a.element == "N" || a.element == "O") {
      p.hba += 1.0;
      if (a.implicit_h >= 1) p.hbd += 1.0;
    }
    if (a.element == "O") p.psa += 20.0;
    if (a.element == "N") p.psa += 12.0;
  }
  p.mw += 1.008 * total_h;

  // aromatic ring count: circuit rank of the aromatic-bond subgraph
  std::vector<int> arom_atoms;
  std::map<int, int> local;
  int arom_edges = 0;
  for (const BondRecord& b : g.bonds) {
    if (b.order != BondOrder::Aromatic) continue;
    ++arom_edges;
    for (int v : {b.a, b.b})
      if (!local.count(v)) {
        local[v] = static_cast<int>(arom_atoms.size());
        arom_atoms.push_back(v);
      }
  }
  if (arom_edges > 0) {
    int nn = static_cast<int>(arom_atoms.size());
    std::vector<std::vector<int>> adj(static_cast<size_t>(nn));
    for (const BondRecord& b : g.bonds) {
      if (b.order != BondOrder::Aromatic) continue;
      adj[static_cast<size_t>(local[b.a])].push_back(local[b.b]);
      adj[static_cast<size_t>(local[b.b])].push_back(local[b.a]);
    }
    std::vector<char> seen(static_cast<size_t>(nn), 0);
    int comps = 0;
    for (int a = 0; a < nn; ++a) {
      if (seen[static_cast<size_t>(a)]) continue;
      ++comps;
      std::vector<int> st{a};
      seen[static_cast<size_t>(a)] = 1;
      while (!st.empty()) {
        int u = st.back();
        st.pop_back();
        for (int v : adj[static_cast<size_t>(u)])
          if (!seen[static_cast<size_t>(v)]) {
            seen[static_cast<size_t>(v)] = 1;
            st.push_back(v);
          }
      }
    }
    p.aromatic_rings = arom_edges - nn + comps;
  }
  return p;
}

Vec PropertyVector::to_vec() const {
  Vec v(5);
  v << mw, hba, hbd, psa, aromatic_rings;
  return v;
}

namespace {

const std::vector<std::string>& vocab_words() {
  static const std::vector<std::string> w = {
      "molecule", "with",    "heavy",   "atom",      "atoms",  "ring",
      "rings",    "fragment", "fragments", "weight", "near",   "units",
      "contains", "acceptors", "donors", "polar",    "area",   "nitrogen",
      "oxygen",   "sulfur",  "phosphorus", "halogen", "aromatic", "charge",
      "no",       "hetero"};
  return w;
}

constexpr int kNumberBase = 26;  // ids [kNumberBase, kNumberBase+128) are "0".."127"

int word_id(const std::string& w) {
  const auto& words = vocab_words();
  for (size_t i = 0; i < words.size(); ++i)
    if (words[i] == w) return static_cast<int>(i);
  throw TokenOutOfVocab("tokenize: unknown word '" + w + "'");
}

int number_id(double x) {
  long v = std::lround(x);
  v = std::clamp(v, 0L, 127L);
  return kNumberBase + static_cast<int>(v);
}

}  // namespace

const std::vector<std::string>& text_vocab() {
  static const std::vector<std::string> v = [] {
    std::vector<std::string> out = vocab_words();
    for (int i = 0; i < 128; ++i) out.push_back(std::to_string(i));
    return out;
  }();
  return v;
}

int text_vocab_size() { return static_cast<int>(text_vocab().size()); }

std::vector<int> tokenize(const std::string& text) {
  std::vector<int> out;
  std::istringstream is(text);
  std::string w;
  while (is >> w) {
    bool numeric = !w.empty() && std::all_of(w.begin(), w.end(), [](char c) {
      return std::isdigit(static_cast<unsigned char>(c));
    });
    if (numeric) {
      long v = std::stol(w);
      if (v < 0 || v > 127) throw TokenOutOfVocab("tokenize: number out of range: " + w);
      out.push_back(kNumberBase + static_cast<int>(v));
    } else {
      out.push_back(word_id(w));
    }
  }
  return out;
}

std::string detokenize(const std::vector<int>& tokens) {
  std::string out;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] < 0 || tokens[i] >= text_vocab_size())
      throw TokenOutOfVocab("detokenize: id " + std::to_string(tokens[i]));
    if (i) out += " ";
    out += text_vocab()[static_cast<size_t>(tokens[i])];
  }
  return out;
}

TextDescription describe(const MoleculeGraph& g, std::uint64_t seed) {
  (void)seed;  // reserved for corpus-level variation; the template is fixed
  PropertyVector d = descriptors(g);
  int heavy = g.n_atoms();
  int rings = g.n_bonds() - g.n_atoms() + 1;  // circuit rank, connected graph
  int frags = static_cast<int>(decompose(g).size());

  std::vector<std::vector<int>> segs;
  segs.push_back({word_id("molecule"), word_id("with"), number_id(heavy),
                  word_id("heavy"), word_id(heavy == 1 ? "atom" : "atoms"),
                  number_id(rings), word_id("rings")});
  segs.push_back({word_id("weight"), word_id("near"), number_id(d.mw), word_id("units")});
  segs.push_back({word_id("contains"), number_id(d.hba), word_id("acceptors"),
                  number_id(d.hbd), word_id("donors")});
  segs.push_back({word_id("polar"), word_id("area"), number_id(d.psa)});
  segs.push_back({number_id(frags), word_id(frags == 1 ? "fragment" : "fragments")});

  bool has_n = false, has_o = false, has_s = false, has_p = false, has_hal = false,
       charged = false, arom = false;
  for (const AtomRecord& a : g.atoms) {
    if (a.element == "N") has_n = true;
    if (a.element == "O") has_o = true;
    if (a.element == "S") has_s = true;
    if (a.element == "P") has_p = true;
    if (a.element == "F" || a.element == "Cl" || a.element == "Br" || a.element == "I")
      has_hal = true;
    if (a.charge != 0) charged = true;
    if (a.aromatic) arom = true;
  }
  if (has_n) segs.push_back({word_id("contains"), word_id("nitrogen")});
  if (has_o) segs.push_back({word_id("contains"), word_id("oxygen")});
  if (has_s) segs.push_back({word_id("contains"), word_id("sulfur")});
  if (has_p) segs.push_back({word_id("contains"), word_id("phosphorus")});
  if (has_hal) segs.push_back({word_id("contains"), word_id("halogen")});
  if (!has_n && !has_o && !has_s && !has_p && !has_hal)
    segs.push_back({word_id("no"), word_id("hetero"), word_id("atoms")});
  if (arom)
    segs.push_back({word_id("aromatic"), word_id("rings"), number_id(d.aromatic_rings)});
  if (charged) segs.push_back({word_id("contains"), word_id("charge")});

  TextDescription t;
  for (const auto& s : segs) {
    int begin = static_cast<int>(t.tokens.size());
    for (int id : s) {
      if (static_cast<int>(t.tokens.size()) >= 64) break;
      t.tokens.push_back(id);
    }
    int end = static_cast<int>(t.tokens.size());
    if (end > begin) t.segments.push_back({begin, end});
    if (end >= 64) break;
  }
  return t;
}

KGData synth_kg(const std::vector<std::pair<std::string, MoleculeGraph>>& molecules,
                std::uint64_t seed) {
  if (molecules.empty()) throw EmptyInput("synth_kg: no molecules");
  KGData kg;
  int n = static_cast<int>(molecules.size());
  kg.n_relations = 3;  // treats, binds, class-of
  const int pool = 16;
  kg.n_entities = n + kg.n_relations * pool;
  for (int i = 0; i < n; ++i) {
    const auto& [id, graph] = molecules[static_cast<size_t>(i)];
    kg.entity_of_mol[id] = i;
    PropertyVector d = descriptors(graph);
    // coarse descriptor bucket so chemically similar molecules land on the
    // same synthetic entities
    std::string key = std::to_string(std::lround(d.mw / 10.0)) + "|" +
                      std::to_string(std::lround(d.hba)) + "|" +
                      std::to_string(std::lround(d.hbd)) + "|" +
                      std::to_string(std::lround(d.psa / 10.0)) + "|" +
                      std::to_string(std::lround(d.aromatic_rings));
    std::uint64_t h = derive_seed(seed, key);
    int k = 1 + static_cast<int>(h % 3);
    for (int r = 0; r < k; ++r) {
      int slot = static_cast<int>(derive_seed(h, "slot", static_cast<std::uint64_t>(r)) %
                                  static_cast<std::uint64_t>(pool));
      kg.triples.push_back({i, r, n + r * pool + slot});
    }
  }
  return kg;
}

PreparedGraph prepare(const MoleculeGraph& g) {
  PreparedGraph p;
  p.graph = g;
  p.node_f = node_features(g);
  p.edge_f = edge_features(g);
  p.subs = decompose(g);
  for (const Substructure& s : p.subs) {
    p.sub_node_f.push_back(node_features(s.graph));
    p.sub_edge_f.push_back(edge_features(s.graph));
  }
  return p;
}

}  // namespace mkmed
