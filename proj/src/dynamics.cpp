#include "soc_ude/dynamics.hpp"

namespace socude {

// Instantiated once here so unit tests and the library share object code.
template Vec<double> second_derivative<double>(const Vec<double>&, double);
template Vec<double> first_derivative<double>(const Vec<double>&, double);
template Vec<double> rhs<double>(const Vec<double>&, double, const RhsContext<double>&);
template Vec<float> rhs<float>(const Vec<float>&, double, const RhsContext<float>&);

}  // namespace socude
