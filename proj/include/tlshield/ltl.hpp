#pragma once

#include <cstdint>
#include <memory>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace tlshield::ltl {

enum class Kind { True, False, Atom, Not, And, Or, Implies, Next, Eventually, Always, Until };

struct Formula;
using FormulaPtr = std::shared_ptr<const Formula>;

struct Formula {
    Kind kind = Kind::True;
    std::string name;                  // Atom only
    std::vector<FormulaPtr> children;  // 0, 1 or 2

    bool operator==(const Formula& other) const;
    bool is_boolean() const;  // no temporal operator anywhere below
};

FormulaPtr make_true();
FormulaPtr make_false();
FormulaPtr make_atom(std::string name);
FormulaPtr make_unary(Kind k, FormulaPtr a);
FormulaPtr make_binary(Kind k, FormulaPtr a, FormulaPtr b);

class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, std::size_t pos)
        : std::runtime_error(what + " at position " + std::to_string(pos)), position(pos) {}
    std::size_t position;
};

// Letters are bitmasks over an ordered alphabet (bit i <=> aps[i] holds).
using Letter = std::uint32_t;

struct LassoWord {
    std::vector<std::string> aps;
    std::vector<Letter> prefix;
    std::vector<Letter> cycle;  // non-empty
};

Letter letter_of(const std::vector<std::string>& aps, const std::set<std::string>& holds);
std::set<std::string> names_of(const std::vector<std::string>& aps, Letter l);

FormulaPtr parse_ltl(const std::string& text, const std::set<std::string>& aps);
std::string to_string(const Formula& f);
std::set<std::string> atomic_props(const Formula& f);
bool contains_next(const Formula& f);

// Formula flattened into postorder and bound to one alphabet; used in hot loops.
class CompiledFormula {
public:
    CompiledFormula(const Formula& f, const std::vector<std::string>& aps);

    bool eval_lasso(const std::vector<Letter>& prefix, const std::vector<Letter>& cycle) const;
    // Propositional evaluation on one letter; temporal nodes are rejected.
    bool eval_letter(Letter l) const;

private:
    struct Node {
        Kind kind;
        int a = -1;
        int b = -1;
        Letter bit = 0;
    };
    std::vector<Node> nodes_;
    mutable std::vector<std::uint8_t> scratch_;
};

bool eval_lasso(const Formula& f, const LassoWord& w);

}  // namespace tlshield::ltl
