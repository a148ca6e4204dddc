#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "preselect/errors.hpp"
#include "preselect/util.hpp"
#include "test_support.hpp"

using namespace preselect;

TEST_CASE("utf8_length counts code points") {
    CHECK(utf8_length("") == 0);
    CHECK(utf8_length("abc") == 3);
    CHECK(utf8_length("h\xC3\xA9llo") == 5);           // é
    CHECK(utf8_length("\xE4\xB8\xAD\xE6\x96\x87") == 2);  // two CJK
    CHECK(utf8_length("\xF0\x9F\x98\x80") == 1);        // emoji
}

TEST_CASE("utf8_decode replaces invalid bytes") {
    CHECK(utf8_decode("a\xC3\xA9") == std::u32string{U'a', U'é'});
    const auto bad = utf8_decode("a\xFF" "b");
    REQUIRE(bad.size() == 3);
    CHECK(bad[1] == U'�');
}

TEST_CASE("fnv1a64 known vectors") {
    CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
    CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
    CHECK(fnv1a64("foobar") == 0x85944171f73967e8ULL);
    CHECK(content_digest("a") == "fnv1a64:af63dc4c8601ec8c");
}

TEST_CASE("Rng is reproducible and below() stays in range") {
    Rng a(42), b(42), c(43);
    std::vector<std::uint64_t> xa, xb, xc;
    for (int i = 0; i < 100; ++i) {
        xa.push_back(a.next());
        xb.push_back(b.next());
        xc.push_back(c.next());
    }
    CHECK(xa == xb);
    CHECK(xa != xc);

    Rng r(7);
    std::vector<int> hits(7, 0);
    for (int i = 0; i < 70000; ++i) {
        const auto v = r.below(7);
        REQUIRE(v < 7);
        ++hits[v];
    }
    for (int h : hits) CHECK(h > 9000);

    for (int i = 0; i < 1000; ++i) {
        const double u = r.uniform();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
    }
}

TEST_CASE("shuffle is a permutation") {
    std::vector<int> v(50);
    std::iota(v.begin(), v.end(), 0);
    Rng r(1);
    r.shuffle(v);
    auto sorted = v;
    std::sort(sorted.begin(), sorted.end());
    std::vector<int> expect(50);
    std::iota(expect.begin(), expect.end(), 0);
    CHECK(sorted == expect);
    CHECK(v != expect);
}

TEST_CASE("atomic write and read back") {
    testing::TempDir dir("util");
    const auto p = dir / "sub/x.txt";
    write_file_atomic(p, "hello");
    CHECK(read_file(p) == "hello");
    write_file_atomic(p, "bye");
    CHECK(read_file(p) == "bye");
    CHECK(file_digest(p) == content_digest("bye"));
    CHECK_THROWS_AS(read_file(dir / "missing"), IoError);
    CHECK(directory_nonempty(dir / "sub"));
    CHECK_FALSE(directory_nonempty(dir / "nothing"));
}
