/* C interface to loopformer: compile SUBLEQ and FLEQ programs into looped
 * transformers, run them, and compare against the reference interpreters.
 *
 * Handles are opaque. Every call that can fail returns lf_status; the message
 * for the last failure on the calling thread is available from lf_last_error().
 * Strings returned through char** are owned by the caller and released with
 * lf_string_free().
 */
#ifndef LOOPFORMER_H
#define LOOPFORMER_H

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(__GNUC__)
#define LF_API __attribute__((visibility("default")))
#else
#define LF_API
#endif

typedef enum lf_status {
    LF_OK = 0,
    LF_ERR_PARSE = 1,
    LF_ERR_VALIDATION = 2,
    LF_ERR_DEVIATION = 3,
    LF_ERR_NUMERIC = 4,
    LF_ERR_INTERNAL = 5,
    LF_ERR_ARGUMENT = 6
} lf_status;

typedef enum lf_kind { LF_SUBLEQ = 0, LF_FLEQ = 1 } lf_kind;
typedef enum lf_mode { LF_HARDMAX = 0, LF_SOFTMAX = 1 } lf_mode;

typedef struct lf_program lf_program;
typedef struct lf_run lf_run;

typedef struct lf_run_config {
    lf_mode mode;
    double lambda;  /* softmax temperature; <= 0 picks it from eps */
    double eps;     /* SUBLEQ: correction radius (0.25). FLEQ: total tolerance. <= 0 keeps the default */
    int cycles;     /* <= 0 runs as many cycles as the reference needs to halt */
    int compare;    /* nonzero: run the reference too and check the trace */
} lf_run_config;

LF_API const char* lf_version(void);
LF_API const char* lf_last_error(void);
LF_API void lf_string_free(char* s);
LF_API void lf_run_config_init(lf_run_config* cfg);

/* n_bits: SUBLEQ integer width (ignored for FLEQ, whose registry comes from the
 * .registry line, linalg when absent). */
LF_API lf_status lf_program_parse(lf_kind kind, const char* text, int n_bits, lf_program** out);
/* Built-in FLEQ programs: calculator, inverse, power, sgd_linear, backprop, sgd_nn.
 * Seed 0 is the worked example. */
LF_API lf_status lf_program_template(const char* name, uint64_t seed, lf_program** out);
LF_API void lf_program_free(lf_program* p);
LF_API lf_kind lf_program_kind(const lf_program* p);
/* Canonical source text; parsing it gives the same program. */
LF_API lf_status lf_program_source(const lf_program* p, char** text);
LF_API lf_status lf_program_shape(const lf_program* p, int* layers, int* heads, int* width, int* columns);
/* Initial tape and layout as JSON. */
LF_API lf_status lf_program_assemble_json(const lf_program* p, char** json);
/* Reference trace, plus classical outputs for built-in programs. */
LF_API lf_status lf_program_oracle_json(const lf_program* p, char** json);

/* Returns LF_ERR_DEVIATION when compare is set and the run leaves its tolerance;
 * *out is still filled in that case. */
LF_API lf_status lf_run_program(const lf_program* p, const lf_run_config* cfg, lf_run** out);
LF_API void lf_run_free(lf_run* r);
LF_API int lf_run_cycles(const lf_run* r);
LF_API int lf_run_halted(const lf_run* r);
/* Program counter (and FLEQ instruction words) equal to the reference every cycle. */
LF_API int lf_run_control_match(const lf_run* r);
/* SUBLEQ: pre-correction deviation from the hardmax run. FLEQ: data deviation from the reference. */
LF_API double lf_run_max_deviation(const lf_run* r);
/* Tolerance the deviation was checked against. */
LF_API double lf_run_bound(const lf_run* r);
LF_API double lf_run_lambda(const lf_run* r);
LF_API lf_status lf_run_trace_json(const lf_run* r, char** json);
/* Per-cycle deviation and the first cycle that disagrees with the reference. */
LF_API lf_status lf_run_diff_json(const lf_run* r, char** json);

/* CSV sweep. param "lambda" needs a program; "c" and "C" sweep the matmul block
 * constants on seeded random operands (p may be NULL, d = 4). c is swept on a
 * log scale, lambda and C linearly. */
LF_API lf_status lf_sweep(const lf_program* p, const char* param, double lo, double hi, int steps, uint64_t seed,
                          char** csv);

#ifdef __cplusplus
}
#endif

#endif
