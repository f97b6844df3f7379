// Porter stemmer, transcribed from the algorithm author's reference C
// implementation (the version with the "bli" and "logi" departures).
#include "vpkit/metrics.hpp"

#include <cstring>

namespace vpkit {

namespace {

class Stemmer {
  public:
    explicit Stemmer(std::string_view word) : b_(word), k_(static_cast<int>(word.size()) - 1) {}

    std::string run() {
        if (k_ <= 1)
            return b_;
        step1ab();
        if (k_ > 0) {
            step1c();
            step2();
            step3();
            step4();
            step5();
        }
        return b_.substr(0, static_cast<std::size_t>(k_ + 1));
    }

  private:
    std::string b_;
    int k_;
    int j_ = 0;

    bool cons(int i) const {
        switch (b_[i]) {
        case 'a':
        case 'e':
        case 'i':
        case 'o':
        case 'u':
            return false;
        case 'y':
            return i == 0 ? true : !cons(i - 1);
        default:
            return true;
        }
    }

    // Number of VC sequences in b[0..j].
    int m() const {
        int n = 0;
        int i = 0;
        while (true) {
            if (i > j_)
                return n;
            if (!cons(i))
                break;
            ++i;
        }
        ++i;
        while (true) {
            while (true) {
                if (i > j_)
                    return n;
                if (cons(i))
                    break;
                ++i;
            }
            ++i;
            ++n;
            while (true) {
                if (i > j_)
                    return n;
                if (!cons(i))
                    break;
                ++i;
            }
            ++i;
        }
    }

    bool vowel_in_stem() const {
        for (int i = 0; i <= j_; ++i)
            if (!cons(i))
                return true;
        return false;
    }

    bool doublec(int j) const {
        if (j < 1)
            return false;
        if (b_[j] != b_[j - 1])
            return false;
        return cons(j);
    }

    bool cvc(int i) const {
        if (i < 2 || !cons(i) || cons(i - 1) || !cons(i - 2))
            return false;
        const char ch = b_[i];
        return !(ch == 'w' || ch == 'x' || ch == 'y');
    }

    bool ends(const char* s) {
        const int length = static_cast<int>(std::strlen(s));
        if (s[length - 1] != b_[k_])
            return false;
        if (length > k_ + 1)
            return false;
        if (b_.compare(static_cast<std::size_t>(k_ - length + 1), static_cast<std::size_t>(length), s) != 0)
            return false;
        j_ = k_ - length;
        return true;
    }

    void setto(const char* s) {
        const int length = static_cast<int>(std::strlen(s));
        b_.resize(static_cast<std::size_t>(j_ + 1));
        b_ += s;
        k_ = j_ + length;
    }

    void r(const char* s) {
        if (m() > 0)
            setto(s);
    }

    void step1ab() {
        if (b_[k_] == 's') {
            if (ends("sses"))
                k_ -= 2;
            else if (ends("ies"))
                setto("i");
            else if (b_[k_ - 1] != 's')
                --k_;
        }
        if (ends("eed")) {
            if (m() > 0)
                --k_;
        } else if ((ends("ed") || ends("ing")) && vowel_in_stem()) {
            k_ = j_;
            if (ends("at"))
                setto("ate");
            else if (ends("bl"))
                setto("ble");
            else if (ends("iz"))
                setto("ize");
            else if (doublec(k_)) {
                --k_;
                const char ch = b_[k_];
                if (ch == 'l' || ch == 's' || ch == 'z')
                    ++k_;
            } else if (m() == 1 && cvc(k_))
                setto("e");
        }
        b_.resize(static_cast<std::size_t>(k_ + 1));
    }

    void step1c() {
        if (ends("y") && vowel_in_stem())
            b_[k_] = 'i';
    }

    bool rule(const char* suffix, const char* replacement) {
        if (!ends(suffix))
            return false;
        r(replacement);
        return true;
    }

    void step2() {
        switch (b_[k_ - 1]) {
        case 'a':
            rule("ational", "ate") || rule("tional", "tion");
            break;
        case 'c':
            rule("enci", "ence") || rule("anci", "ance");
            break;
        case 'e':
            rule("izer", "ize");
            break;
        case 'l':
            rule("bli", "ble") || rule("alli", "al") || rule("entli", "ent") || rule("eli", "e") ||
                rule("ousli", "ous");
            break;
        case 'o':
            rule("ization", "ize") || rule("ation", "ate") || rule("ator", "ate");
            break;
        case 's':
            rule("alism", "al") || rule("iveness", "ive") || rule("fulness", "ful") || rule("ousness", "ous");
            break;
        case 't':
            rule("aliti", "al") || rule("iviti", "ive") || rule("biliti", "ble");
            break;
        case 'g':
            rule("logi", "log");
            break;
        default:
            break;
        }
        b_.resize(static_cast<std::size_t>(k_ + 1));
    }

    void step3() {
        switch (b_[k_]) {
        case 'e':
            rule("icate", "ic") || rule("ative", "") || rule("alize", "al");
            break;
        case 'i':
            rule("iciti", "ic");
            break;
        case 'l':
            rule("ical", "ic") || rule("ful", "");
            break;
        case 's':
            rule("ness", "");
            break;
        default:
            break;
        }
        b_.resize(static_cast<std::size_t>(k_ + 1));
    }

    void step4() {
        bool found = false;
        switch (b_[k_ - 1]) {
        case 'a':
            found = ends("al");
            break;
        case 'c':
            found = ends("ance") || ends("ence");
            break;
        case 'e':
            found = ends("er");
            break;
        case 'i':
            found = ends("ic");
            break;
        case 'l':
            found = ends("able") || ends("ible");
            break;
        case 'n':
            found = ends("ant") || ends("ement") || ends("ment") || ends("ent");
            break;
        case 'o':
            found = (ends("ion") && j_ >= 0 && (b_[j_] == 's' || b_[j_] == 't')) || ends("ou");
            break;
        case 's':
            found = ends("ism");
            break;
        case 't':
            found = ends("ate") || ends("iti");
            break;
        case 'u':
            found = ends("ous");
            break;
        case 'v':
            found = ends("ive");
            break;
        case 'z':
            found = ends("ize");
            break;
        default:
            break;
        }
        if (found && m() > 1)
            k_ = j_;
        b_.resize(static_cast<std::size_t>(k_ + 1));
    }

    void step5() {
        j_ = k_;
        if (b_[k_] == 'e') {
            const int a = m();
            if (a > 1 || (a == 1 && !cvc(k_ - 1)))
                --k_;
        }
        if (b_[k_] == 'l' && doublec(k_) && m() > 1)
            --k_;
        b_.resize(static_cast<std::size_t>(k_ + 1));
    }
};

} // namespace

std::string porter_stem(std::string_view word) { return Stemmer(word).run(); }

} // namespace vpkit
