#pragma once

#include <Eigen/Dense>
#include <limits>
#include <optional>
#include <vector>

#include "orc/controls.hpp"
#include "orc/integrate.hpp"
#include "orc/nlp.hpp"
#include "orc/steady_state.hpp"
#include "orc/system.hpp"

namespace orc {

/// Operating envelope enforced along trajectories and at steady points:
/// minimal superheat, maximal evaporator outlet temperature, an evaporation
/// pressure band, and boxes on the three controls. Temperatures in kelvin,
/// everything else in starred units.
struct OperatingEnvelope {
  double dT_sup_min = 10.0;
  double T_out_star_max = 0.8719;
  double p_star_min = 0.3;
  double p_star_max = 1.5;
  Eigen::Vector3d u_lower = Eigen::Vector3d(0.0073, 0.73, 0.05);
  Eigen::Vector3d u_upper = Eigen::Vector3d(0.0363, 1.09, 1.00);
};

/// Best steady operating point at a fixed disturbance: maximises net power
/// subject to the envelope, warm-starting the plant solve between iterates.
struct SteadyOptimum {
  Eigen::Vector3d u_star = Eigen::Vector3d::Zero();
  SteadyStateResult steady;
  NlpResult nlp;
};

SteadyOptimum optimal_steady_state(const SystemParams& params,
                                   const Eigen::Vector2d& d_star,
                                   const OperatingEnvelope& envelope = {},
                                   const NlpOptions& nlp_options = {});

/// Integral objectives over one closed-loop trajectory.
enum class ObjectiveKind {
  Phi1,  ///< integral of squared superheat deviation from the minimum bound
  Phi2,  ///< negative integral of starred net power
};

/// One horizon segment; the turbine-power cap applies only on segments
/// marked power_limited.
struct Stage {
  double t_start = 0.0;
  double t_end = 0.0;
  bool power_limited = false;
};

/// A dynamic optimisation problem over piecewise-linear continuous controls
/// on a shared knot grid. Path constraints are enforced pointwise on a check
/// grid of at least `check_per_interval` points per control interval plus
/// all stage boundaries, and verified after the solve on a grid four times
/// denser.
struct OcpSpec {
  std::vector<Stage> stages;
  ObjectiveKind objective = ObjectiveKind::Phi2;
  OperatingEnvelope envelope;
  /// Cap on starred turbine power over power-limited stages.
  double P_turb_star_max = std::numeric_limits<double>::infinity();
  /// Optional ceiling on superheat [K] along the whole horizon.
  double dT_sup_max = std::numeric_limits<double>::infinity();
  /// Shared control knot times spanning the horizon.
  std::vector<double> control_times;
  int check_per_interval = 4;
  /// Integration mesh width [s] for optimizer evaluations. Shooting for
  /// the optimizer runs on a fixed mesh so the objective is a smooth
  /// function of the control nodes; an adaptive step sequence re-decided
  /// at every iterate would put jitter on the objective that stalls the
  /// line search far above the stationarity target. The solution is always
  /// re-integrated adaptively at tight tolerance for reporting and
  /// constraint verification, so this width trades optimizer-model bias
  /// against speed, not final accuracy of the reported numbers.
  double shoot_dt = 0.5;
  /// Starting guess for the control nodes; defaults to the optimal steady
  /// controls at d(t0).
  std::optional<Eigen::Vector3d> u_init;
  /// Initial plant state; defaults to the optimal steady state at d(t0).
  std::optional<Vec7> x0;
  NlpOptions nlp;
};

struct OcpSolution {
  ControlSchedule controls;
  /// Closed-loop trajectory of the solution: plant states followed by the
  /// two objective quadrature states (superheat deviation, net work).
  Trajectory trajectory;
  double objective = 0.0;
  double phi1 = 0.0;  ///< superheat-deviation integral [K^2 s]
  double phi2 = 0.0;  ///< negative net-work integral [starred * s]
  /// For the two-step minimal-superheat procedure: the superheat objective
  /// reached by step one, before net work is re-optimised.
  std::optional<double> phi1_step1;
  /// Largest scaled path-constraint violation on the verification grid.
  double max_violation = 0.0;
  double kkt = 0.0;
  bool converged = false;
  NlpResult nlp;
  Eigen::Vector3d u_steady = Eigen::Vector3d::Zero();
  Vec7 x0 = Vec7::Zero();
};

void validate(const OcpSpec& spec);

OcpSolution solve_ocp(const OcpSpec& spec, const SystemParams& params,
                      const Disturbance& disturbance);

/// Minimal-superheat policy in two steps: first minimise the superheat
/// deviation over all controls, then re-optimise net work over the turbine
/// speed alone with the other two control trajectories frozen. Rejects
/// specs with power-limited stages, which this procedure cannot honor; use
/// solve_msh_bounded there.
OcpSolution solve_msh_two_step(const OcpSpec& spec, const SystemParams& params,
                               const Disturbance& disturbance);

/// Minimal-superheat policy as a single net-work maximisation under a tight
/// superheat ceiling (default 10.7 K). Valid with power-limited stages.
OcpSolution solve_msh_bounded(const OcpSpec& spec, const SystemParams& params,
                              const Disturbance& disturbance);

/// Quadrature of the squared superheat deviation above the envelope minimum
/// over a stored trajectory, adaptive to relative tolerance 1e-8.
double eval_phi1(const ClosedLoop& cl, const Trajectory& traj,
                 double dT_sup_min = 10.0);

/// Negative quadrature of starred net power over a stored trajectory.
double eval_phi2(const ClosedLoop& cl, const Trajectory& traj);

}  // namespace orc
