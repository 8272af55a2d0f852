/*
 * machrt.c — runtime support for generated emulators.
 *
 * Single source file: memory areas are allocated once at startup (no
 * dynamic allocation afterwards), the MBC1 image loader fills the code
 * and constant areas, and solutions print in exactly the bytes the
 * in-process evaluator produces.
 */

#define _POSIX_C_SOURCE 199309L

#include "machrt.h"

#include <inttypes.h>
#include <stdio.h>
#include <stdlib.h>
#include <string.h>
#include <time.h>

mach_regs g;
tagged_t *mach_mem;
mach_image_t mach_image;

#define TAG(w)  ((w) & 7u)
#define VAL(w)  ((w) >> 3)
#define T_REF 0u
#define T_STR 1u
#define T_LST 2u
#define T_ATM 3u
#define T_NUM 4u

#define NUM_MIN (-(INT64_C(1) << 60))
#define NUM_MAX ((INT64_C(1) << 60) - 1)

static int64_t num_value(tagged_t w) { return ((int64_t)w) >> 3; }

static tagged_t mknum(int64_t v)
{
    if (v < NUM_MIN || v > NUM_MAX)
        rt_trap("integer overflow");
    return ((tagged_t)v << 3) | T_NUM;
}

/* ------------------------------------------------------------------ */
/* control */

void rt_stop(int status) { g.status = status; }

void rt_trap(const char *msg)
{
    fprintf(stderr, "machrt: trap: %s\n", msg);
    exit(2);
}

static void rt_overflow(const char *area)
{
    fprintf(stderr, "machrt: %s overflow\n", area);
    exit(4);
}

/* ------------------------------------------------------------------ */
/* areas */

void rt_check_heap(void)
{
    if (g.h >= g.heap_end)
        rt_overflow("heap");
}

void rt_trail_push(uint64_t addr)
{
    if (g.ntrail >= g.trail_max)
        rt_overflow("trail");
    g.trail[g.ntrail++] = addr;
    g.ntrail_total++;
}

void rt_push_frame(uint64_t n)
{
    uint64_t base = g.ft;
    if (g.ncp && g.cps[g.ncp - 1].ft > base)
        base = g.cps[g.ncp - 1].ft;
    if (base + 2 + n > g.frame_end)
        rt_overflow("frame");
    mach_mem[base] = g.e;
    mach_mem[base + 1] = g.cp;
    g.e = base;
    g.ft = base + 2 + n;
}

void rt_pop_frame(void)
{
    uint64_t e = g.e;
    g.ft = e;
    g.cp = mach_mem[e + 1];
    g.e = mach_mem[e];
}

void rt_push_choice(uint64_t n, uint64_t alt)
{
    if (g.ncp >= g.choice_max)
        rt_overflow("choice");
    if (g.cpxtop + n > g.cpx_size)
        rt_overflow("choice");
    mach_cp *c = &g.cps[g.ncp++];
    c->nx = (uint32_t)n;
    c->xbase = g.cpxtop;
    memcpy(g.cpx + c->xbase, mach_mem, n * sizeof(tagged_t));
    g.cpxtop += n;
    c->e = g.e;
    c->cont = g.cp;
    c->h = g.h;
    c->tr = g.ntrail;
    c->ft = g.ft;
    c->alt = (uint32_t)alt;
    c->b0 = g.b0;
    g.ncps++;
}

void rt_pop_choice(void)
{
    g.ncp--;
    g.cpxtop = g.cps[g.ncp].xbase;
}

void rt_cut_to_b0(void)
{
    if (g.b0 < g.ncp) {
        g.ncp = g.b0;
        g.cpxtop = g.ncp ? g.cps[g.ncp - 1].xbase + g.cps[g.ncp - 1].nx : 0;
    }
}

void rt_fail_restore(void)
{
    mach_cp *c = &g.cps[g.ncp - 1];
    memcpy(mach_mem, g.cpx + c->xbase, c->nx * sizeof(tagged_t));
    g.e = c->e;
    g.cp = c->cont;
    g.h = c->h;
    while (g.ntrail > c->tr) {
        uint64_t a = g.trail[--g.ntrail];
        mach_mem[a] = a << 3;
    }
    g.ft = c->ft;
    g.p = c->alt;
    g.b0 = c->b0;
    g.mode = 0;
}

/* ------------------------------------------------------------------ */
/* builtins (arguments are dereferenced tagged words) */

static tagged_t blt_deref(tagged_t w)
{
    while (TAG(w) == T_REF) {
        tagged_t nxt = mach_mem[VAL(w)];
        if (nxt == w)
            return w;
        w = nxt;
    }
    return w;
}

static int64_t blt_num(tagged_t w)
{
    w = blt_deref(w);
    if (TAG(w) != T_NUM)
        rt_trap("arithmetic on a non-number");
    return num_value(w);
}

bool rt_blt1s(uint64_t id, tagged_t a)
{
    switch (id) {
    case 12: return TAG(blt_deref(a)) == T_NUM;   /* isnum */
    default: rt_trap("unknown semidet builtin/1");
    }
    return false;
}

bool rt_blt2s(uint64_t id, tagged_t a, tagged_t b)
{
    int64_t x = blt_num(a), y = blt_num(b);
    switch (id) {
    case 0: return x < y;
    case 1: return x <= y;
    case 2: return x > y;
    case 3: return x >= y;
    case 4: return x == y;
    case 5: return x != y;
    default: rt_trap("unknown semidet builtin/2");
    }
    return false;
}

tagged_t rt_blt2d(uint64_t id, tagged_t a)
{
    switch (id) {
    case 11: return mknum(-blt_num(a));           /* neg */
    default: rt_trap("unknown det builtin/2");
    }
    return 0;
}

tagged_t rt_blt3d(uint64_t id, tagged_t a, tagged_t b)
{
    int64_t x = blt_num(a), y = blt_num(b);
    switch (id) {
    case 6: return mknum(x + y);
    case 7: return mknum(x - y);
    case 8: return mknum(x * y);
    case 9: {                                     /* truncated division */
        if (y == 0)
            rt_trap("division by zero");
        int64_t q = (x < 0 ? -x : x) / (y < 0 ? -y : y);
        return mknum(((x < 0) != (y < 0)) ? -q : q);
    }
    case 10: {                                    /* floored modulus */
        if (y == 0)
            rt_trap("division by zero");
        int64_t r = x % y;
        if (r != 0 && ((r < 0) != (y < 0)))
            r += y;
        return mknum(r);
    }
    default: rt_trap("unknown det builtin/3");
    }
    return 0;
}

/* ------------------------------------------------------------------ */
/* solution rendering: byte-identical to the in-process evaluator */

#define MAX_VARMAP 4096
static uint64_t varmap_addr[MAX_VARMAP];
static uint32_t varmap_n;

static void render(tagged_t w, int depth)
{
    if (depth > 10000)
        rt_trap("term too deep to print");
    while (TAG(w) == T_REF) {
        tagged_t nxt = mach_mem[VAL(w)];
        if (nxt == w) {
            uint64_t a = VAL(w);
            uint32_t i;
            for (i = 0; i < varmap_n; i++)
                if (varmap_addr[i] == a)
                    break;
            if (i == varmap_n) {
                if (varmap_n >= MAX_VARMAP)
                    rt_trap("too many distinct unbound variables");
                varmap_addr[varmap_n++] = a;
            }
            printf("_%u", i);
            return;
        }
        w = nxt;
    }
    switch (TAG(w)) {
    case T_NUM:
        printf("%" PRId64, num_value(w));
        return;
    case T_ATM:
        printf("%s", mach_image.atoms[VAL(w) >> 12]);
        return;
    case T_STR: {
        tagged_t f = mach_mem[VAL(w)];
        uint32_t arity = (uint32_t)(VAL(f) & 4095u);
        printf("%s(", mach_image.atoms[VAL(f) >> 12]);
        for (uint32_t i = 0; i < arity; i++) {
            if (i)
                printf(",");
            render(mach_mem[VAL(w) + 1 + i], depth + 1);
        }
        printf(")");
        return;
    }
    case T_LST: {
        printf("[");
        int first = 1;
        for (;;) {
            uint64_t base = VAL(w);
            if (!first)
                printf(",");
            render(mach_mem[base], depth + 1);
            first = 0;
            tagged_t tail = mach_mem[base + 1];
            while (TAG(tail) == T_REF) {
                tagged_t nxt = mach_mem[VAL(tail)];
                if (nxt == tail)
                    break;
                tail = nxt;
            }
            if (TAG(tail) == T_LST) {
                w = tail;
                continue;
            }
            if (TAG(tail) == T_ATM && (VAL(tail) & 4095u) == 0
                    && strcmp(mach_image.atoms[VAL(tail) >> 12], "[]") == 0)
                break;
            printf("|");
            render(tail, depth + 1);
            break;
        }
        printf("]");
        return;
    }
    default:
        rt_trap("cannot render word");
    }
}

void rt_solution(uint64_t nvars)
{
    g.nsol++;
    if (nvars == 0) {
        printf("true\n");
        return;
    }
    varmap_n = 0;
    for (uint64_t i = 0; i < nvars; i++) {
        if (i)
            printf(", ");
        const char *name = i < mach_image.q_nvars
            ? mach_image.atoms[mach_image.q_vars[i]]
            : "?";
        printf("%s = ", name);
        render(mach_mem[g.e + 2 + i], 0);
    }
    printf("\n");
}

/* ------------------------------------------------------------------ */
/* timer */

uint64_t rt_now_ns(void)
{
    struct timespec ts;
    clock_gettime(CLOCK_MONOTONIC, &ts);
    return (uint64_t)ts.tv_sec * 1000000000ull + (uint64_t)ts.tv_nsec;
}

/* ------------------------------------------------------------------ */
/* image loading (MBC1, little-endian) */

static const uint8_t *ld_p, *ld_end;

static int ld_fail(const char *msg)
{
    fprintf(stderr, "machrt: bad image: %s\n", msg);
    return 3;
}

static int ld_u32(uint32_t *out)
{
    if (ld_end - ld_p < 4)
        return -1;
    *out = (uint32_t)ld_p[0] | ((uint32_t)ld_p[1] << 8)
         | ((uint32_t)ld_p[2] << 16) | ((uint32_t)ld_p[3] << 24);
    ld_p += 4;
    return 0;
}

static int ld_u64(uint64_t *out)
{
    uint32_t lo, hi;
    if (ld_u32(&lo) || ld_u32(&hi))
        return -1;
    *out = (uint64_t)lo | ((uint64_t)hi << 32);
    return 0;
}

int rt_load_image(const char *path)
{
    FILE *f = fopen(path, "rb");
    if (!f) {
        fprintf(stderr, "machrt: cannot open %s\n", path);
        return 3;
    }
    fseek(f, 0, SEEK_END);
    long size = ftell(f);
    fseek(f, 0, SEEK_SET);
    uint8_t *data = malloc((size_t)size);
    if (!data || fread(data, 1, (size_t)size, f) != (size_t)size) {
        fclose(f);
        return ld_fail("short read");
    }
    fclose(f);
    ld_p = data;
    ld_end = data + size;

    if (size < 8 || memcmp(ld_p, "MBC1", 4) != 0)
        return ld_fail("magic");
    ld_p += 4;
    uint32_t version;
    if (ld_u32(&version) || version != 1)
        return ld_fail("version");

    if (ld_u32(&mach_image.natoms))
        return ld_fail("atoms");
    mach_image.atoms = calloc(mach_image.natoms, sizeof(char *));
    for (uint32_t i = 0; i < mach_image.natoms; i++) {
        uint32_t len;
        if (ld_u32(&len) || (uint64_t)(ld_end - ld_p) < len)
            return ld_fail("atom");
        mach_image.atoms[i] = malloc(len + 1);
        memcpy(mach_image.atoms[i], ld_p, len);
        mach_image.atoms[i][len] = 0;
        ld_p += len;
    }
    if (ld_u32(&mach_image.ncode))
        return ld_fail("code count");
    mach_image.code = calloc(mach_image.ncode ? mach_image.ncode : 1, 4);
    for (uint32_t i = 0; i < mach_image.ncode; i++)
        if (ld_u32(&mach_image.code[i]))
            return ld_fail("code");
    if (ld_u32(&mach_image.npool))
        return ld_fail("pool count");
    mach_image.pool = calloc(mach_image.npool ? mach_image.npool : 1, 8);
    for (uint32_t i = 0; i < mach_image.npool; i++)
        if (ld_u64(&mach_image.pool[i]))
            return ld_fail("pool");
    if (ld_u32(&mach_image.nentries))
        return ld_fail("entry count");
    mach_image.entry_atom = calloc(mach_image.nentries ? mach_image.nentries : 1, 4);
    mach_image.entry_arity = calloc(mach_image.nentries ? mach_image.nentries : 1, 4);
    mach_image.entry_off = calloc(mach_image.nentries ? mach_image.nentries : 1, 4);
    for (uint32_t i = 0; i < mach_image.nentries; i++) {
        if (ld_u32(&mach_image.entry_atom[i])
                || ld_u32(&mach_image.entry_arity[i])
                || ld_u32(&mach_image.entry_off[i]))
            return ld_fail("entry");
    }
    if (ld_p >= ld_end)
        return ld_fail("query flag");
    mach_image.has_query = *ld_p++;
    if (mach_image.has_query) {
        if (ld_u32(&mach_image.q_atom) || ld_u32(&mach_image.q_arity)
                || ld_u32(&mach_image.q_nvars))
            return ld_fail("query");
        mach_image.q_vars = calloc(mach_image.q_nvars ? mach_image.q_nvars : 1, 4);
        for (uint32_t i = 0; i < mach_image.q_nvars; i++)
            if (ld_u32(&mach_image.q_vars[i]))
                return ld_fail("query var");
    }
    free(data);
    return 0;
}

/* ------------------------------------------------------------------ */
/* startup and entry */

static int rt_setup(const mach_area_config *cfg)
{
    if (cfg->heap_words == 0 || cfg->frame_words == 0
            || cfg->choice_slots == 0 || cfg->trail_words == 0) {
        const char *which = cfg->heap_words == 0 ? "heap"
            : cfg->frame_words == 0 ? "frame"
            : cfg->choice_slots == 0 ? "choice" : "trail";
        fprintf(stderr, "machrt: zero-size area: %s\n", which);
        return 4;
    }
    memset(&g, 0, sizeof g);
    g.heap_base = MACH_FRAME_BASE + cfg->frame_words;
    g.heap_end = g.heap_base + cfg->heap_words;
    g.frame_end = g.heap_base;
    g.trail_max = cfg->trail_words;
    g.choice_max = cfg->choice_slots;
    mach_mem = calloc(g.heap_end, sizeof(tagged_t));
    g.trail = calloc(cfg->trail_words, sizeof(uint64_t));
    g.cps = calloc(cfg->choice_slots, sizeof(mach_cp));
    g.cpx_size = cfg->choice_slots * 8 + MACH_N_XREGS;
    g.cpx = calloc(g.cpx_size, sizeof(tagged_t));
    if (!mach_mem || !g.trail || !g.cps || !g.cpx) {
        fprintf(stderr, "machrt: out of memory at startup\n");
        return 4;
    }
    g.e = MACH_FRAME_BASE;
    g.ft = MACH_FRAME_BASE;
    g.h = g.heap_base;
    g.step_limit = 200000000ull;
    g.maxsol = 1;
    g.status = MACH_RUNNING;
    return 0;
}

static int find_entry(const char *name, uint32_t arity, uint32_t *off)
{
    for (uint32_t i = 0; i < mach_image.nentries; i++) {
        if (mach_image.entry_arity[i] == arity
                && strcmp(mach_image.atoms[mach_image.entry_atom[i]], name) == 0) {
            *off = mach_image.entry_off[i];
            return 0;
        }
    }
    return -1;
}

int mach_main(int argc, char **argv)
{
    const char *path = NULL;
    const char *query = "$query";
    mach_area_config cfg = {1u << 20, 1u << 18, 1u << 18, 1u << 18};
    uint64_t maxsol = 1;
    int timing = 0;
    for (int i = 1; i < argc; i++) {
        if (strcmp(argv[i], "--max-solutions") == 0 && i + 1 < argc)
            maxsol = strtoull(argv[++i], NULL, 10);
        else if (strcmp(argv[i], "--query") == 0 && i + 1 < argc)
            query = argv[++i];
        else if (strcmp(argv[i], "--heap-words") == 0 && i + 1 < argc)
            cfg.heap_words = strtoull(argv[++i], NULL, 10);
        else if (strcmp(argv[i], "--time") == 0)
            timing = 1;
        else if (argv[i][0] == '-') {
            fprintf(stderr, "machrt: unknown flag %s\n", argv[i]);
            return 1;
        } else {
            path = argv[i];
        }
    }
    if (!path) {
        fprintf(stderr, "usage: emulator IMAGE.mbc [--max-solutions N] "
                        "[--query NAME] [--time]\n");
        return 1;
    }
    int rc = rt_load_image(path);
    if (rc)
        return rc;
    rc = rt_setup(&cfg);
    if (rc)
        return rc;
    g.maxsol = maxsol;
    uint32_t start;
    if (find_entry(query, 0, &start)) {
        fprintf(stderr, "machrt: no entry %s/0 in image\n", path);
        return 3;
    }
    uint64_t t0 = rt_now_ns();
    emu(start);
    uint64_t t1 = rt_now_ns();
    printf("# choice_points=%" PRIu64 "\n", g.ncps);
    printf("# dispatches=%" PRIu64 "\n", g.ndisp);
    printf("# heap_allocs=%" PRIu64 "\n", g.nheap);
    printf("# solutions=%" PRIu64 "\n", g.nsol);
    printf("# trail_pushes=%" PRIu64 "\n", g.ntrail_total);
    if (timing)
        printf("# time_ns=%" PRIu64 "\n", t1 - t0);
    if (g.status == MACH_ILLEGAL) {
        fprintf(stderr, "machrt: illegal opcode\n");
        return 2;
    }
    if (g.status == MACH_STEPS) {
        fprintf(stderr, "machrt: step budget exceeded\n");
        return 2;
    }
    return 0;
}

int main(int argc, char **argv)
{
    return mach_main(argc, argv);
}
