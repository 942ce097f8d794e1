#include <stdio.h>
#include <string.h>

#include "srnewton.h"

#define CHECK(call)                                                        \
  do {                                                                     \
    SrnStatus s_ = (call);                                                 \
    if (s_ != SRN_STATUS_OK) {                                             \
      fprintf(stderr, "%s -> %d: %s\n", #call, (int)s_, srn_last_error()); \
      return 1;                                                            \
    }                                                                      \
  } while (0)

int main(void) {
  SrnInstance *raw = NULL, *inst = NULL;
  CHECK(srn_instance_generate(24, 8, 6, 1.0, 3, 0.6, &raw));
  CHECK(srn_instance_choose_weights(raw, 1.0, 0.0, &inst));
  srn_instance_free(raw);

  size_t d = 0;
  CHECK(srn_instance_dims(inst, NULL, NULL, &d));
  if (d != 6) return 2;

  double x[6], g[6], h[36], loss = 0.0, loss_reg = 0.0;
  for (size_t i = 0; i < d; i++) x[i] = 0.5 / 2.449489742783178;
  CHECK(srn_eval_loss(inst, x, d, &loss, &loss_reg));
  CHECK(srn_gradient(inst, x, d, g));
  CHECK(srn_hessian(inst, x, d, h));
  if (!(loss_reg > loss)) return 3;

  SrnSolveOptions opts = srn_solve_options_default(SRN_MODE_APPROX_NEWTON);
  SrnSolveSummary sum;
  double xs[6];
  CHECK(srn_solve(inst, x, d, &opts, xs, &sum));
  if (!sum.converged) return 4;

  if (srn_gradient(inst, x, 5, g) != SRN_STATUS_DIMENSION) return 5;
  if (srn_last_error() == NULL) return 6;

  char *json = NULL;
  CHECK(srn_instance_to_json(inst, &json));
  SrnInstance *back = NULL;
  CHECK(srn_instance_from_json(json, &back));
  srn_string_free(json);
  srn_instance_free(back);
  srn_instance_free(inst);

  printf("ok iterations=%llu\n", (unsigned long long)sum.iterations);
  return 0;
}
