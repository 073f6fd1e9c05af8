#include "tlshield/ltl.hpp"

#include <cctype>
#include <functional>

namespace tlshield::ltl {

namespace {

int arity(Kind k) {
    switch (k) {
        case Kind::True:
        case Kind::False:
        case Kind::Atom: return 0;
        case Kind::Not:
        case Kind::Next:
        case Kind::Eventually:
        case Kind::Always: return 1;
        default: return 2;
    }
}

enum class Tok { Ident, True, False, Not, And, Or, Implies, Next, Eventually, Always, Until, LParen, RParen, End };

struct Token {
    Tok kind;
    std::string text;
    std::size_t pos;
};

class Parser {
public:
    Parser(const std::string& text, const std::set<std::string>& aps) : text_(text), aps_(aps) { lex(); }

    FormulaPtr parse() {
        if (toks_.size() == 1) throw ParseError("empty formula", 0);
        auto f = implication();
        if (peek().kind != Tok::End) throw ParseError("unexpected token '" + peek().text + "'", peek().pos);
        return f;
    }

private:
    void lex() {
        std::size_t i = 0;
        while (i < text_.size()) {
            char c = text_[i];
            if (std::isspace(static_cast<unsigned char>(c))) { ++i; continue; }
            std::size_t start = i;
            if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
                while (i < text_.size() && (std::isalnum(static_cast<unsigned char>(text_[i])) || text_[i] == '_')) ++i;
                word(text_.substr(start, i - start), start);
                continue;
            }
            switch (c) {
                case '!': toks_.push_back({Tok::Not, "!", start}); ++i; break;
                case '&': toks_.push_back({Tok::And, "&", start}); ++i; break;
                case '|': toks_.push_back({Tok::Or, "|", start}); ++i; break;
                case '(': toks_.push_back({Tok::LParen, "(", start}); ++i; break;
                case ')': toks_.push_back({Tok::RParen, ")", start}); ++i; break;
                case '-':
                    if (i + 1 < text_.size() && text_[i + 1] == '>') {
                        toks_.push_back({Tok::Implies, "->", start});
                        i += 2;
                        break;
                    }
                    [[fallthrough]];
                default: throw ParseError(std::string("unexpected character '") + c + "'", start);
            }
        }
        toks_.push_back({Tok::End, "end of input", text_.size()});
    }

    // Keywords, identifiers, and run-together unary prefixes such as "GF".
    void word(const std::string& w, std::size_t pos) {
        if (w == "true") return toks_.push_back({Tok::True, w, pos});
        if (w == "false") return toks_.push_back({Tok::False, w, pos});
        if (w == "U") return toks_.push_back({Tok::Until, w, pos});
        if (aps_.count(w)) return toks_.push_back({Tok::Ident, w, pos});
        bool all_unary = true;
        for (char c : w) all_unary = all_unary && (c == 'F' || c == 'G' || c == 'X');
        if (all_unary) {
            for (std::size_t k = 0; k < w.size(); ++k) {
                Tok t = w[k] == 'F' ? Tok::Eventually : w[k] == 'G' ? Tok::Always : Tok::Next;
                toks_.push_back({t, std::string(1, w[k]), pos + k});
            }
            return;
        }
        toks_.push_back({Tok::Ident, w, pos});
    }

    const Token& peek() const { return toks_[at_]; }
    const Token& next() { return toks_[at_++]; }

    FormulaPtr implication() {
        auto lhs = disjunction();
        if (peek().kind == Tok::Implies) {
            next();
            return make_binary(Kind::Implies, lhs, implication());
        }
        return lhs;
    }

    FormulaPtr disjunction() {
        auto lhs = conjunction();
        while (peek().kind == Tok::Or) {
            next();
            lhs = make_binary(Kind::Or, lhs, conjunction());
        }
        return lhs;
    }

    FormulaPtr conjunction() {
        auto lhs = until();
        while (peek().kind == Tok::And) {
            next();
            lhs = make_binary(Kind::And, lhs, until());
        }
        return lhs;
    }

    FormulaPtr until() {
        auto lhs = unary();
        if (peek().kind == Tok::Until) {
            next();
            return make_binary(Kind::Until, lhs, until());
        }
        return lhs;
    }

    FormulaPtr unary() {
        const Token& t = next();
        switch (t.kind) {
            case Tok::Not: return make_unary(Kind::Not, unary());
            case Tok::Next: return make_unary(Kind::Next, unary());
            case Tok::Eventually: return make_unary(Kind::Eventually, unary());
            case Tok::Always: return make_unary(Kind::Always, unary());
            case Tok::True: return make_true();
            case Tok::False: return make_false();
            case Tok::Ident:
                if (!aps_.count(t.text)) throw ParseError("unknown atom '" + t.text + "'", t.pos);
                return make_atom(t.text);
            case Tok::LParen: {
                auto f = implication();
                if (peek().kind != Tok::RParen) throw ParseError("expected ')'", peek().pos);
                next();
                return f;
            }
            case Tok::End: throw ParseError("missing operand at end of input", t.pos);
            default: throw ParseError("unexpected token '" + t.text + "'", t.pos);
        }
    }

    const std::string& text_;
    const std::set<std::string>& aps_;
    std::vector<Token> toks_;
    std::size_t at_ = 0;
};

// Binding strength used by the printer; larger binds tighter.
int level(Kind k) {
    switch (k) {
        case Kind::Implies: return 0;
        case Kind::Or: return 1;
        case Kind::And: return 2;
        case Kind::Until: return 3;
        case Kind::Not:
        case Kind::Next:
        case Kind::Eventually:
        case Kind::Always: return 4;
        default: return 5;
    }
}

void print(const Formula& f, std::string& out) {
    auto sub = [&](const Formula& c, int min_level) {
        if (level(c.kind) < min_level) {
            out += '(';
            print(c, out);
            out += ')';
        } else {
            print(c, out);
        }
    };
    switch (f.kind) {
        case Kind::True: out += "true"; return;
        case Kind::False: out += "false"; return;
        case Kind::Atom: out += f.name; return;
        case Kind::Not: out += '!'; sub(*f.children[0], 4); return;
        case Kind::Next: out += "X "; sub(*f.children[0], 4); return;
        case Kind::Eventually: out += "F "; sub(*f.children[0], 4); return;
        case Kind::Always: out += "G "; sub(*f.children[0], 4); return;
        case Kind::And: sub(*f.children[0], 2); out += " & "; sub(*f.children[1], 3); return;
        case Kind::Or: sub(*f.children[0], 1); out += " | "; sub(*f.children[1], 2); return;
        // Right-associative operators parenthesize a left child of equal level.
        case Kind::Until: sub(*f.children[0], 4); out += " U "; sub(*f.children[1], 3); return;
        case Kind::Implies: sub(*f.children[0], 1); out += " -> "; sub(*f.children[1], 0); return;
    }
}

}  // namespace

bool Formula::operator==(const Formula& other) const {
    if (kind != other.kind || name != other.name || children.size() != other.children.size()) return false;
    for (std::size_t i = 0; i < children.size(); ++i)
        if (!(*children[i] == *other.children[i])) return false;
    return true;
}

bool Formula::is_boolean() const {
    if (kind == Kind::Next || kind == Kind::Eventually || kind == Kind::Always || kind == Kind::Until) return false;
    for (const auto& c : children)
        if (!c->is_boolean()) return false;
    return true;
}

FormulaPtr make_true() { return std::make_shared<Formula>(Formula{Kind::True, {}, {}}); }
FormulaPtr make_false() { return std::make_shared<Formula>(Formula{Kind::False, {}, {}}); }
FormulaPtr make_atom(std::string name) {
    if (name.empty()) throw std::invalid_argument("empty atom name");
    return std::make_shared<Formula>(Formula{Kind::Atom, std::move(name), {}});
}
FormulaPtr make_unary(Kind k, FormulaPtr a) {
    if (arity(k) != 1) throw std::invalid_argument("not a unary operator");
    return std::make_shared<Formula>(Formula{k, {}, {std::move(a)}});
}
FormulaPtr make_binary(Kind k, FormulaPtr a, FormulaPtr b) {
    if (arity(k) != 2) throw std::invalid_argument("not a binary operator");
    return std::make_shared<Formula>(Formula{k, {}, {std::move(a), std::move(b)}});
}

Letter letter_of(const std::vector<std::string>& aps, const std::set<std::string>& holds) {
    Letter l = 0;
    for (std::size_t i = 0; i < aps.size(); ++i)
        if (holds.count(aps[i])) l |= Letter{1} << i;
    for (const auto& h : holds) {
        bool known = false;
        for (const auto& a : aps) known = known || a == h;
        if (!known) throw std::invalid_argument("label '" + h + "' is not in the alphabet");
    }
    return l;
}

std::set<std::string> names_of(const std::vector<std::string>& aps, Letter l) {
    std::set<std::string> out;
    for (std::size_t i = 0; i < aps.size(); ++i)
        if (l & (Letter{1} << i)) out.insert(aps[i]);
    return out;
}

FormulaPtr parse_ltl(const std::string& text, const std::set<std::string>& aps) {
    return Parser(text, aps).parse();
}

std::string to_string(const Formula& f) {
    std::string out;
    print(f, out);
    return out;
}

std::set<std::string> atomic_props(const Formula& f) {
    std::set<std::string> out;
    std::function<void(const Formula&)> walk = [&](const Formula& g) {
        if (g.kind == Kind::Atom) out.insert(g.name);
        for (const auto& c : g.children) walk(*c);
    };
    walk(f);
    return out;
}

bool contains_next(const Formula& f) {
    if (f.kind == Kind::Next) return true;
    for (const auto& c : f.children)
        if (contains_next(*c)) return true;
    return false;
}

CompiledFormula::CompiledFormula(const Formula& f, const std::vector<std::string>& aps) {
    if (aps.size() > 32) throw std::invalid_argument("alphabet larger than 32 propositions");
    std::function<int(const Formula&)> emit = [&](const Formula& g) -> int {
        Node n{g.kind};
        if (g.kind == Kind::Atom) {
            bool found = false;
            for (std::size_t i = 0; i < aps.size(); ++i)
                if (aps[i] == g.name) {
                    n.bit = Letter{1} << i;
                    found = true;
                }
            if (!found) throw std::invalid_argument("atom '" + g.name + "' is not in the alphabet");
        }
        if (!g.children.empty()) n.a = emit(*g.children[0]);
        if (g.children.size() > 1) n.b = emit(*g.children[1]);
        nodes_.push_back(n);
        return static_cast<int>(nodes_.size()) - 1;
    };
    emit(f);
}

bool CompiledFormula::eval_letter(Letter l) const {
    auto& v = scratch_;
    v.assign(nodes_.size(), 0);
    for (std::size_t k = 0; k < nodes_.size(); ++k) {
        const Node& n = nodes_[k];
        switch (n.kind) {
            case Kind::True: v[k] = 1; break;
            case Kind::False: v[k] = 0; break;
            case Kind::Atom: v[k] = (l & n.bit) != 0; break;
            case Kind::Not: v[k] = !v[n.a]; break;
            case Kind::And: v[k] = v[n.a] && v[n.b]; break;
            case Kind::Or: v[k] = v[n.a] || v[n.b]; break;
            case Kind::Implies: v[k] = !v[n.a] || v[n.b]; break;
            default: throw std::logic_error("temporal operator in a propositional guard");
        }
    }
    return v.back() != 0;
}

bool CompiledFormula::eval_lasso(const std::vector<Letter>& prefix, const std::vector<Letter>& cycle) const {
    if (cycle.empty()) throw std::invalid_argument("lasso cycle must be non-empty");
    const std::size_t p = prefix.size(), c = cycle.size(), n = p + c;
    auto letter = [&](std::size_t i) { return i < p ? prefix[i] : cycle[i - p]; };
    auto succ = [&](std::size_t i) { return i + 1 < n ? i + 1 : p; };
    auto& v = scratch_;
    v.assign(nodes_.size() * n, 0);

    for (std::size_t k = 0; k < nodes_.size(); ++k) {
        const Node& nd = nodes_[k];
        std::uint8_t* out = &v[k * n];
        const std::uint8_t* a = nd.a >= 0 ? &v[nd.a * n] : nullptr;
        const std::uint8_t* b = nd.b >= 0 ? &v[nd.b * n] : nullptr;
        switch (nd.kind) {
            case Kind::True: std::fill(out, out + n, 1); break;
            case Kind::False: break;
            case Kind::Atom:
                for (std::size_t i = 0; i < n; ++i) out[i] = (letter(i) & nd.bit) != 0;
                break;
            case Kind::Not:
                for (std::size_t i = 0; i < n; ++i) out[i] = !a[i];
                break;
            case Kind::And:
                for (std::size_t i = 0; i < n; ++i) out[i] = a[i] && b[i];
                break;
            case Kind::Or:
                for (std::size_t i = 0; i < n; ++i) out[i] = a[i] || b[i];
                break;
            case Kind::Implies:
                for (std::size_t i = 0; i < n; ++i) out[i] = !a[i] || b[i];
                break;
            case Kind::Next:
                for (std::size_t i = 0; i < n; ++i) out[i] = a[succ(i)];
                break;
            case Kind::Until:
            case Kind::Eventually: {
                // Least fixpoint of out = goal | (hold & X out).
                const std::uint8_t* goal = nd.kind == Kind::Until ? b : a;
                auto hold = [&](std::size_t i) { return nd.kind == Kind::Eventually || a[i]; };
                for (std::size_t sweep = 0; sweep <= c; ++sweep)
                    for (std::size_t i = n; i-- > p;) out[i] = goal[i] || (hold(i) && out[succ(i)]);
                for (std::size_t i = p; i-- > 0;) out[i] = goal[i] || (hold(i) && out[i + 1]);
                break;
            }
            case Kind::Always: {
                // Greatest fixpoint of out = a & X out.
                for (std::size_t i = p; i < n; ++i) out[i] = a[i];
                for (std::size_t sweep = 0; sweep <= c; ++sweep)
                    for (std::size_t i = n; i-- > p;) out[i] = a[i] && out[succ(i)];
                for (std::size_t i = p; i-- > 0;) out[i] = a[i] && out[i + 1];
                break;
            }
        }
    }
    return v[(nodes_.size() - 1) * n] != 0;
}

bool eval_lasso(const Formula& f, const LassoWord& w) {
    return CompiledFormula(f, w.aps).eval_lasso(w.prefix, w.cycle);
}

}  // namespace tlshield::ltl
