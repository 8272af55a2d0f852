/*
 * machrt.h — runtime support for generated emulators.
 *
 * The generated translation unit provides `void emu(uint32_t start)` and
 * uses the services below: one flat word memory shared by X registers,
 * a scratch area, the frame stack and the heap; a trail; a choice-point
 * stack with an X-register save area; builtin dispatch; image loading;
 * solution printing (byte-identical to the in-process evaluator); and a
 * monotonic timer.
 *
 * Word model: 64-bit words, 3 low tag bits (ref=0 str=1 lst=2 atm=3
 * num=4), payload in the upper 61 bits (two's complement for numbers).
 */

#ifndef MACHRT_H
#define MACHRT_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef uint64_t tagged_t;

enum { MACH_RUNNING = 0, MACH_HALT, MACH_FAIL, MACH_ILLEGAL, MACH_STEPS,
       MACH_TRAP };

/* memory layout (word indices into mach_mem) */
#define MACH_X_BASE       0u
#define MACH_N_XREGS      256u
#define MACH_SCRATCH_BASE 256u
#define MACH_FRAME_BASE   512u

typedef struct {
    uint32_t nx;       /* saved X registers */
    uint64_t xbase;    /* offset of the saved block in the save area */
    uint64_t e, cont, h, tr, ft;
    uint32_t alt;      /* alternative code offset */
    uint32_t b0;
} mach_cp;

typedef struct {
    uint64_t p, cp, e, ft, h, s;
    uint32_t mode;     /* 0 = read, 1 = write */
    uint32_t b0;
    uint64_t ndisp, nheap, ntrail, ntrail_total, ncps, nsol;
    uint64_t step_limit, maxsol;
    uint32_t ncp;
    uint64_t cpxtop, cpx_size;
    int status;
    uint64_t heap_base, heap_end, frame_end, trail_max, choice_max;
    uint64_t *trail;
    mach_cp *cps;
    tagged_t *cpx;
} mach_regs;

typedef struct {
    uint32_t *code;
    uint32_t ncode;
    tagged_t *pool;
    uint32_t npool;
    char **atoms;
    uint32_t natoms;
    uint32_t *entry_atom, *entry_arity, *entry_off;
    uint32_t nentries;
    int has_query;
    uint32_t q_atom, q_arity, q_nvars;
    uint32_t *q_vars;
} mach_image_t;

typedef struct {
    uint64_t heap_words;      /* default 1M */
    uint64_t frame_words;     /* default 256K */
    uint64_t choice_slots;    /* default 256K */
    uint64_t trail_words;     /* default 256K */
} mach_area_config;

extern mach_regs g;
extern tagged_t *mach_mem;
extern mach_image_t mach_image;

/* provided by the generated emulator unit */
void emu(uint32_t start);

/* control */
void rt_stop(int status);
void rt_trap(const char *msg);

/* areas */
void rt_check_heap(void);
void rt_trail_push(uint64_t addr);
void rt_push_frame(uint64_t n);
void rt_pop_frame(void);
void rt_push_choice(uint64_t n, uint64_t alt);
void rt_pop_choice(void);
void rt_cut_to_b0(void);
void rt_fail_restore(void);

/* solutions */
void rt_solution(uint64_t nvars);

/* builtin bridges */
bool rt_blt1s(uint64_t id, tagged_t a);
bool rt_blt2s(uint64_t id, tagged_t a, tagged_t b);
tagged_t rt_blt2d(uint64_t id, tagged_t a);
tagged_t rt_blt3d(uint64_t id, tagged_t a, tagged_t b);

/* monotonic clock, nanoseconds */
uint64_t rt_now_ns(void);

/* image loading + entry point; returns the process exit status */
int rt_load_image(const char *path);
int mach_main(int argc, char **argv);

#endif /* MACHRT_H */
